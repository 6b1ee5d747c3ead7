//! Retrieval evaluation: datasets, Precision@k, configuration grids,
//! inter-annotator agreement, and synthetic corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionParams, HybridIndex};
use crate::kb::{Author, Entry};
use crate::lexical::Scorer;
use crate::vector::{EmbeddingProvider, HashingProvider};

/// Number of relevant entries every question carries.
pub const RELEVANT_PER_QUESTION: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: i64,
    pub topic_id: i64,
    pub text: String,
    pub relevant: BTreeSet<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalDataset {
    pub topics: Vec<Topic>,
    pub questions: Vec<Question>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum DatasetRecord {
    Topic(Topic),
    Question(Question),
}

impl EvalDataset {
    /// Checks the shape rules: known topics and exactly five relevant ids per question.
    pub fn validate(&self) -> Result<()> {
        let topics: BTreeSet<i64> = self.topics.iter().map(|t| t.id).collect();
        if topics.len() != self.topics.len() {
            return Err(Error::invalid("duplicate topic id"));
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id) {
                return Err(Error::invalid(format!("duplicate question id {}", q.id)));
            }
            if !topics.contains(&q.topic_id) {
                return Err(Error::invalid(format!("question {} has unknown topic {}", q.id, q.topic_id)));
            }
            if q.relevant.len() != RELEVANT_PER_QUESTION {
                return Err(Error::invalid(format!(
                    "question {} has {} relevant entries, expected {RELEVANT_PER_QUESTION}",
                    q.id,
                    q.relevant.len()
                )));
            }
        }
        Ok(())
    }

    /// Reads the JSON-lines format: one `topic` or `question` record per line.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut out = EvalDataset::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetRecord = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?;
            match rec {
                DatasetRecord::Topic(t) => out.topics.push(t),
                DatasetRecord::Question(q) => out.questions.push(q),
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for t in &self.topics {
            serde_json::to_writer(&mut w, &DatasetRecord::Topic(t.clone()))?;
            w.write_all(b"\n")?;
        }
        for q in &self.questions {
            serde_json::to_writer(&mut w, &DatasetRecord::Question(q.clone()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `|top-k(retrieved) ∩ relevant| / k`.
pub fn precision_at_k(retrieved: &[i64], relevant: &BTreeSet<i64>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let hits = retrieved.iter().take(k).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Retriever {
    Lexical { scorer: Scorer },
    Semantic,
    Hybrid { params: FusionParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub name: String,
    pub retriever: Retriever,
}

impl EvalConfig {
    pub fn lexical(scorer: Scorer) -> Self {
        EvalConfig { name: format!("{scorer} only"), retriever: Retriever::Lexical { scorer } }
    }

    pub fn semantic() -> Self {
        EvalConfig { name: "semantic only".into(), retriever: Retriever::Semantic }
    }

    pub fn hybrid(alpha: f64, scorer: Scorer) -> Self {
        let params = FusionParams { alpha, scorer, ..FusionParams::default() };
        EvalConfig { name: format!("hybrid {scorer} alpha={alpha}"), retriever: Retriever::Hybrid { params } }
    }

    /// Lexical arms, the semantic arm, and hybrids at alpha 0.5 and 0.9.
    pub fn default_grid() -> Vec<Self> {
        vec![
            Self::lexical(Scorer::TfIdf),
            Self::lexical(Scorer::Bm25),
            Self::semantic(),
            Self::hybrid(0.5, Scorer::TfIdf),
            Self::hybrid(0.9, Scorer::TfIdf),
            Self::hybrid(0.9, Scorer::Bm25),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: i64,
    pub retrieved: Vec<i64>,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config: EvalConfig,
    pub mean_precision: f64,
    pub per_question: Vec<QuestionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub results: Vec<ConfigResult>,
}

impl EvalReport {
    pub fn mean(&self, name: &str) -> Option<f64> {
        self.results.iter().find(|r| r.config.name == name).map(|r| r.mean_precision)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = format!("Precision@{}", self.k);
        let width = self.results.iter().map(|r| r.config.name.len()).max().unwrap_or(0).max("Configuration".len());
        writeln!(f, "{:<width$}  {header}", "Configuration")?;
        writeln!(f, "{}  {}", "-".repeat(width), "-".repeat(header.len()))?;
        for r in &self.results {
            writeln!(f, "{:<width$}  {:>w2$.3}", r.config.name, r.mean_precision, w2 = header.len())?;
        }
        Ok(())
    }
}

fn retrieve(
    index: &HybridIndex,
    provider: &dyn EmbeddingProvider,
    retriever: &Retriever,
    query: &str,
    k: usize,
) -> Result<Vec<i64>> {
    let ids = match retriever {
        Retriever::Lexical { scorer } => {
            index.lexical_search(query, k, *scorer, None)?.into_iter().map(|(id, _)| id).collect()
        }
        Retriever::Semantic => index.semantic_search(provider, query, k, None)?.into_iter().map(|(id, _)| id).collect(),
        Retriever::Hybrid { params } => {
            let params = FusionParams { k, ..params.clone() };
            index.hybrid_search(provider, query, &params, None)?.into_iter().map(|c| c.entry_id).collect()
        }
    };
    Ok(ids)
}

/// Mean Precision@k per configuration, with per-question breakdowns.
///
/// Fails with an integrity error before any query runs if a relevant id is
/// not in the index.
pub fn evaluate_search(
    index: &HybridIndex,
    provider: &dyn EmbeddingProvider,
    dataset: &EvalDataset,
    configs: &[EvalConfig],
    k: usize,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    dataset.validate()?;
    let known: BTreeSet<i64> = index.vectors().entries().map(|(id, _)| id).collect();
    for q in &dataset.questions {
        if let Some(missing) = q.relevant.iter().find(|id| !known.contains(id)) {
            return Err(Error::Integrity(format!(
                "question {} lists entry {missing} which is not in the corpus",
                q.id
            )));
        }
    }
    let mut results = Vec::with_capacity(configs.len());
    for config in configs {
        let per_question = dataset
            .questions
            .par_iter()
            .map(|q| {
                let retrieved = retrieve(index, provider, &config.retriever, &q.text, k)?;
                let precision = precision_at_k(&retrieved, &q.relevant, k)?;
                Ok(QuestionResult { question_id: q.id, retrieved, precision })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_precision = if per_question.is_empty() {
            0.0
        } else {
            per_question.iter().map(|r| r.precision).sum::<f64>() / per_question.len() as f64
        };
        results.push(ConfigResult { config: config.clone(), mean_precision, per_question });
    }
    Ok(EvalReport { k, results })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Nominal,
    Ordinal,
    Interval,
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(DistanceMetric::Nominal),
            "ordinal" => Ok(DistanceMetric::Ordinal),
            "interval" => Ok(DistanceMetric::Interval),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// Items x raters grid of scores in `1..=5`; `None` marks a missing score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    rows: Vec<Vec<Option<u8>>>,
}

impl AnnotationMatrix {
    pub fn new(rows: Vec<Vec<Option<u8>>>) -> Result<Self> {
        let raters = rows.first().map_or(0, Vec::len);
        if raters < 2 {
            return Err(Error::invalid("at least two raters are required"));
        }
        if rows.iter().any(|r| r.len() != raters) {
            return Err(Error::invalid("every item needs one cell per rater"));
        }
        if let Some(v) = rows.iter().flatten().flatten().find(|v| !(1..=5).contains(*v)) {
            return Err(Error::invalid(format!("score {v} is outside 1..=5")));
        }
        if !rows.iter().any(|r| r.iter().flatten().count() >= 2) {
            return Err(Error::invalid("no item has two or more scores"));
        }
        Ok(AnnotationMatrix { rows })
    }

    /// Complete matrix from plain scores.
    pub fn from_scores(rows: &[Vec<u8>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect())
    }

    pub fn rows(&self) -> &[Vec<Option<u8>>] {
        &self.rows
    }
}

/// Krippendorff's alpha via the coincidence matrix.
///
/// Items with fewer than two scores are ignored. When every pairable value
/// is identical both disagreements are zero and the result is 1.0.
pub fn krippendorff_alpha(matrix: &AnnotationMatrix, metric: DistanceMetric) -> Result<f64> {
    let mut coincidence: BTreeMap<(u8, u8), f64> = BTreeMap::new();
    for row in matrix.rows() {
        let values: Vec<u8> = row.iter().flatten().copied().collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if i != j {
                    *coincidence.entry((*a, *b)).or_default() += w;
                }
            }
        }
    }
    let mut marginals: BTreeMap<u8, f64> = BTreeMap::new();
    for ((c, _), o) in &coincidence {
        *marginals.entry(*c).or_default() += o;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 {
        return Err(Error::Undefined("fewer than two pairable values".into()));
    }
    let delta2 = |c: u8, k: u8| -> f64 {
        match metric {
            DistanceMetric::Nominal => f64::from(u8::from(c != k)),
            DistanceMetric::Interval => (f64::from(c) - f64::from(k)).powi(2),
            DistanceMetric::Ordinal => {
                let (lo, hi) = (c.min(k), c.max(k));
                let between: f64 = marginals.range(lo..=hi).map(|(_, n)| n).sum();
                (between - (marginals[&c] + marginals[&k]) / 2.0).powi(2)
            }
        }
    };
    let d_o: f64 = coincidence.iter().map(|((c, k), o)| o * delta2(*c, *k)).sum::<f64>() / n;
    let mut d_e = 0.0;
    for (c, nc) in &marginals {
        for (k, nk) in &marginals {
            d_e += nc * nk * delta2(*c, *k);
        }
    }
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        return if d_o == 0.0 { Ok(1.0) } else { Err(Error::Undefined("expected disagreement is zero".into())) };
    }
    Ok(1.0 - d_o / d_e)
}

/// Synthetic corpus plus its evaluation dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub authors: Vec<Author>,
    pub entries: Vec<Entry>,
    pub dataset: EvalDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkShape {
    pub topics: usize,
    pub entries_per_topic: usize,
    pub questions_per_topic: usize,
}

impl Default for BenchmarkShape {
    fn default() -> Self {
        BenchmarkShape { topics: 25, entries_per_topic: 5, questions_per_topic: 2 }
    }
}

/// Everyday words shared by all topics.
const COMMON_WORDS: &[&str] = &[
    "morning",
    "evening",
    "today",
    "yesterday",
    "wrote",
    "letter",
    "went",
    "came",
    "home",
    "house",
    "day",
    "night",
    "long",
    "little",
    "great",
    "good",
    "old",
    "new",
    "family",
    "friend",
    "mother",
    "father",
    "brother",
    "sister",
    "walked",
    "talked",
    "thought",
    "felt",
    "again",
    "still",
    "much",
    "many",
    "time",
    "week",
    "year",
    "town",
    "road",
    "table",
    "window",
    "door",
    "book",
    "read",
    "quiet",
    "cold",
    "warm",
    "early",
    "late",
    "tired",
    "glad",
    "strange",
];

const ONSETS: &[&str] =
    &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kr", "pl", "st", "tr"];
const VOWELS: &[&str] = &["a", "o", "u", "i"];

/// Words per topic concept list.
const CONCEPTS_PER_TOPIC: usize = 8;

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Each concept has two interchangeable surface forms (the synonym table).
struct TopicVocab {
    name: String,
    concepts: Vec<[String; 2]>,
}

/// A second surface form that the default local provider maps to the same
/// signed feature as `word`.
///
/// This stands in for an encoder that embeds synonyms close together: the
/// semantic arm sees one concept, the lexical arm sees two unrelated strings.
fn synonym_of(word: &str, rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, provider: &HashingProvider) -> String {
    let target = provider.feature(word);
    loop {
        let candidate = pseudo_word(rng, used);
        if provider.feature(&candidate) == target {
            return candidate;
        }
        used.remove(&candidate);
    }
}

fn topic_vocabularies(rng: &mut ChaCha8Rng, topics: usize) -> Vec<TopicVocab> {
    let provider = HashingProvider::default();
    let mut used: BTreeSet<String> = COMMON_WORDS.iter().map(|s| s.to_string()).collect();
    (0..topics)
        .map(|_| {
            let concepts: Vec<[String; 2]> = (0..CONCEPTS_PER_TOPIC)
                .map(|_| {
                    let word = pseudo_word(rng, &mut used);
                    let synonym = synonym_of(&word, rng, &mut used, &provider);
                    [word, synonym]
                })
                .collect();
            TopicVocab { name: format!("{} {}", concepts[0][0], concepts[1][0]), concepts }
        })
        .collect()
}

fn sentence(words: Vec<String>) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

fn topic_word(rng: &mut ChaCha8Rng, vocab: &TopicVocab) -> String {
    vocab.concepts.choose(rng).expect("non-empty")[0].clone()
}

fn entry_text(rng: &mut ChaCha8Rng, vocabs: &[TopicVocab], topic: usize) -> String {
    let len = rng.gen_range(24..=36);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let roll: f64 = rng.gen();
        let w = if roll < 0.60 {
            topic_word(rng, &vocabs[topic])
        } else if roll < 0.66 && vocabs.len() > 1 {
            let other = (topic + rng.gen_range(1..vocabs.len())) % vocabs.len();
            topic_word(rng, &vocabs[other])
        } else {
            COMMON_WORDS.choose(rng).expect("non-empty").to_string()
        };
        words.push(w);
    }
    words.chunks(9).map(|c| sentence(c.to_vec())).collect::<Vec<_>>().join(" ")
}

/// Probability that a question uses a concept's synonym instead of the form
/// the entries use.
const SYNONYM_RATE: f64 = 0.75;

/// Probability that a drawn concept is left out of the question.
const DROPOUT_RATE: f64 = 0.25;

/// Question built from six topic concepts with synonym substitution and
/// word dropout; at least one concept always survives.
fn question_text(rng: &mut ChaCha8Rng, vocab: &TopicVocab) -> String {
    let mut concepts: Vec<&[String; 2]> = vocab.concepts.iter().collect();
    concepts.shuffle(rng);
    let mut words: Vec<String> = ["what", "did", "they", "say", "about"].iter().map(|s| s.to_string()).collect();
    let mut kept = 0;
    for c in concepts.iter().take(6) {
        if rng.gen_bool(DROPOUT_RATE) && kept > 0 {
            continue;
        }
        words.push(c[usize::from(rng.gen_bool(SYNONYM_RATE))].clone());
        kept += 1;
    }
    words.push(COMMON_WORDS.choose(rng).expect("non-empty").to_string());
    let mut q = words.join(" ");
    q.push('?');
    q
}

fn date_for(rng: &mut ChaCha8Rng) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(1890, 1, 1).expect("valid date");
    start + chrono::Duration::days(rng.gen_range(0..(40 * 365)))
}

fn authors_for(rng: &mut ChaCha8Rng, count: usize) -> Vec<Author> {
    (1..=count as i64)
        .map(|id| {
            let birth = NaiveDate::from_ymd_opt(
                1840 + rng.gen_range(0..40),
                1 + rng.gen_range(0..12),
                1 + rng.gen_range(0..28),
            )
            .expect("valid date");
            let bio_words: Vec<String> =
                (0..8).map(|_| COMMON_WORDS.choose(rng).expect("non-empty").to_string()).collect();
            Author {
                id,
                name: format!("Author {id}"),
                birth_date: Some(birth),
                death_date: None,
                bio: sentence(bio_words),
            }
        })
        .collect()
}

/// Deterministic topic-structured corpus and question set.
///
/// Entry ids run from 1 in topic order; every question's relevant set is the
/// five entries of its topic.
pub fn generate_benchmark(seed: u64, shape: BenchmarkShape) -> Benchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabs = topic_vocabularies(&mut rng, shape.topics);
    let authors = authors_for(&mut rng, 10.min(shape.topics.max(1)));
    let mut entries = Vec::new();
    let mut topics = Vec::new();
    let mut questions = Vec::new();
    for (t, vocab) in vocabs.iter().enumerate() {
        let topic_id = t as i64 + 1;
        topics.push(Topic { id: topic_id, name: vocab.name.clone() });
        let mut relevant = BTreeSet::new();
        for _ in 0..shape.entries_per_topic {
            let id = entries.len() as i64 + 1;
            relevant.insert(id);
            entries.push(Entry {
                id,
                author_id: authors.choose(&mut rng).expect("non-empty").id,
                date: date_for(&mut rng),
                text: entry_text(&mut rng, &vocabs, t),
                source_url: None,
            });
        }
        for _ in 0..shape.questions_per_topic {
            questions.push(Question {
                id: questions.len() as i64 + 1,
                topic_id,
                text: question_text(&mut rng, vocab),
                relevant: relevant.clone(),
            });
        }
    }
    Benchmark { authors, entries, dataset: EvalDataset { topics, questions } }
}

/// Large corpus for latency measurements: `entries` passages over 500 topics.
pub fn generate_scale_corpus(seed: u64, entries: usize) -> (Vec<Author>, Vec<Entry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabs = topic_vocabularies(&mut rng, 500);
    let authors = authors_for(&mut rng, 200);
    let out = (0..entries)
        .map(|i| Entry {
            id: i as i64 + 1,
            author_id: authors[i % authors.len()].id,
            date: date_for(&mut rng),
            text: entry_text(&mut rng, &vocabs, i % vocabs.len()),
            source_url: None,
        })
        .collect();
    (authors, out)
}

/// A question drawn the same way as benchmark questions, for latency runs.
pub fn scale_queries(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabs = topic_vocabularies(&mut rng, 500);
    let mut qrng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count).map(|i| question_text(&mut qrng, &vocabs[(i * 37) % vocabs.len()])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_examples() {
        let relevant: BTreeSet<i64> = [1, 2, 3, 4, 5].into();
        assert_eq!(precision_at_k(&[1, 9, 2, 8, 3], &relevant, 5).unwrap(), 0.6);
        assert_eq!(precision_at_k(&[5, 4, 3, 2, 1], &relevant, 5).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[6, 7, 8, 9, 10], &relevant, 5).unwrap(), 0.0);
        assert_eq!(precision_at_k(&[1, 2], &relevant, 5).unwrap(), 0.4);
        assert!(precision_at_k(&[1], &relevant, 0).is_err());
    }

    #[test]
    fn benchmark_shape_and_determinism() {
        let b = generate_benchmark(7, BenchmarkShape::default());
        assert_eq!(b.entries.len(), 125);
        assert_eq!(b.dataset.questions.len(), 50);
        assert_eq!(b.dataset.topics.len(), 25);
        b.dataset.validate().unwrap();
        for q in &b.dataset.questions {
            let lo = (q.topic_id - 1) * 5 + 1;
            assert_eq!(q.relevant, (lo..lo + 5).collect());
        }
        assert_eq!(b, generate_benchmark(7, BenchmarkShape::default()));
        assert_ne!(b.entries, generate_benchmark(8, BenchmarkShape::default()).entries);
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let b = generate_benchmark(1, BenchmarkShape::default());
        let mut buf = Vec::new();
        b.dataset.write_jsonl(&mut buf).unwrap();
        assert_eq!(EvalDataset::read_jsonl(buf.as_slice()).unwrap(), b.dataset);
    }

    #[test]
    fn dataset_rejects_wrong_relevant_count() {
        let ds = EvalDataset {
            topics: vec![Topic { id: 1, name: "t".into() }],
            questions: vec![Question { id: 1, topic_id: 1, text: "q".into(), relevant: [1, 2].into() }],
        };
        assert!(ds.validate().is_err());
    }

    #[test]
    fn alpha_perfect_agreement_and_undefined() {
        let m = AnnotationMatrix::from_scores(&[vec![3, 3], vec![5, 5], vec![1, 1]]).unwrap();
        for metric in [DistanceMetric::Nominal, DistanceMetric::Ordinal, DistanceMetric::Interval] {
            assert_eq!(krippendorff_alpha(&m, metric).unwrap(), 1.0);
        }
        let constant = AnnotationMatrix::from_scores(&[vec![4, 4], vec![4, 4]]).unwrap();
        assert_eq!(krippendorff_alpha(&constant, DistanceMetric::Interval).unwrap(), 1.0);
        assert!(AnnotationMatrix::new(vec![vec![Some(1)], vec![Some(2)]]).is_err());
        assert!(AnnotationMatrix::new(vec![vec![Some(1), None]]).is_err());
        assert!(AnnotationMatrix::from_scores(&[vec![0, 6]]).is_err());
    }

    #[test]
    fn alpha_is_invariant_under_reordering() {
        let rows = vec![vec![1, 2, 3], vec![2, 2, 4], vec![5, 4, 4], vec![3, 1, 2]];
        let m = AnnotationMatrix::from_scores(&rows).unwrap();
        let mut swapped: Vec<Vec<u8>> = rows.iter().rev().map(|r| r.iter().rev().copied().collect()).collect();
        swapped.rotate_left(1);
        let s = AnnotationMatrix::from_scores(&swapped).unwrap();
        for metric in [DistanceMetric::Nominal, DistanceMetric::Ordinal, DistanceMetric::Interval] {
            let a = krippendorff_alpha(&m, metric).unwrap();
            let b = krippendorff_alpha(&s, metric).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
