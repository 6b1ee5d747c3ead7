//! Full-text arm: text analysis, inverted index, TF-IDF and BM25 scoring.
//!
//! Both scorers work off the same postings. TF-IDF weights a term as
//! `(1 + ln tf) * ln((1 + N) / (1 + df))` and compares query and passage by
//! cosine over these sparse vectors. BM25 uses the Robertson/Sparck-Jones idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))` with the usual saturation term.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stemmer {
    None,
    #[default]
    LightSuffix,
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "before", "but",
    "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "here", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so",
    "some", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "too",
    "us", "was", "we", "were", "what", "when", "where", "which", "who", "whom", "why", "will", "with", "would", "you",
    "your",
];

/// Tokenization settings. Segmentation always follows Unicode word boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
    pub stemmer: Stemmer,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            lowercase: true,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            stemmer: Stemmer::LightSuffix,
        }
    }
}

impl AnalyzerConfig {
    /// No stopwords, no stemming; only segmentation and casefolding.
    pub fn plain() -> Self {
        AnalyzerConfig { lowercase: true, stopwords: BTreeSet::new(), stemmer: Stemmer::None }
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.unicode_words()
            .filter_map(|word| {
                let word = if self.lowercase { word.to_lowercase() } else { word.to_string() };
                if self.stopwords.contains(&word) {
                    return None;
                }
                Some(match self.stemmer {
                    Stemmer::None => word,
                    Stemmer::LightSuffix => light_stem(&word),
                })
            })
            .collect()
    }
}

/// Strips a handful of common inflectional suffixes, keeping at least three characters.
pub fn light_stem(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let ends = |s: &str| word.ends_with(s);
    let cut = |k: usize| -> String { chars[..n - k].iter().collect() };
    if n > 5 && ends("ies") {
        return cut(3) + "y";
    }
    for (suffix, len) in [("ingly", 5), ("edly", 4), ("ing", 3), ("ed", 2), ("ly", 2)] {
        if ends(suffix) && n >= len + 3 {
            return cut(len);
        }
    }
    if n >= 5 && ["sses", "xes", "zes", "ches", "shes"].iter().any(|s| ends(s)) {
        return cut(2);
    }
    if n >= 4 && ends("s") && !["ss", "us", "is"].iter().any(|s| ends(s)) {
        return cut(1);
    }
    word.to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    #[default]
    TfIdf,
    Bm25,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfidf" | "tf-idf" => Ok(Scorer::TfIdf),
            "bm25" => Ok(Scorer::Bm25),
            other => Err(Error::invalid(format!("unknown scorer {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scorer::TfIdf => "tfidf",
            Scorer::Bm25 => "bm25",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub entry_id: i64,
    pub tf: u32,
}

/// Immutable term -> postings map with per-passage statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: AnalyzerConfig,
    bm25: Bm25Params,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: BTreeMap<i64, u32>,
    avg_doc_len: f64,
    tfidf_norms: HashMap<i64, f64>,
}

pub fn tfidf_idf(df: usize, n: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln()
}

pub fn tfidf_weight(tf: u32, df: usize, n: usize) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    (1.0 + (tf as f64).ln()) * tfidf_idf(df, n)
}

pub fn bm25_idf(df: usize, n: usize) -> f64 {
    let (df, n) = (df as f64, n as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl InvertedIndex {
    pub fn build<'a, I>(entries: I, analyzer: AnalyzerConfig) -> Result<Self>
    where
        I: IntoIterator<Item = (i64, &'a str)>,
    {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = BTreeMap::new();
        let mut docs: Vec<(i64, &str)> = entries.into_iter().collect();
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        docs.sort_by_key(|(id, _)| *id);
        for (id, text) in docs {
            let tokens = analyzer.analyze(text);
            if doc_lengths.insert(id, tokens.len() as u32).is_some() {
                return Err(Error::invalid(format!("duplicate entry id {id}")));
            }
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            // ids arrive sorted, so each postings list stays sorted by entry id
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { entry_id: id, tf });
            }
        }
        Ok(Self::from_parts(analyzer, Bm25Params::default(), postings, doc_lengths))
    }

    fn from_parts(
        analyzer: AnalyzerConfig,
        bm25: Bm25Params,
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: BTreeMap<i64, u32>,
    ) -> Self {
        let n = doc_lengths.len();
        let total: u64 = doc_lengths.values().map(|&l| l as u64).sum();
        let avg_doc_len = if n == 0 { 0.0 } else { total as f64 / n as f64 };
        let mut sq: HashMap<i64, f64> = doc_lengths.keys().map(|&id| (id, 0.0)).collect();
        for list in postings.values() {
            for p in list {
                let w = tfidf_weight(p.tf, list.len(), n);
                *sq.get_mut(&p.entry_id).expect("posting for unknown doc") += w * w;
            }
        }
        let tfidf_norms = sq.into_iter().map(|(id, s)| (id, s.sqrt())).collect();
        InvertedIndex { analyzer, bm25, postings, doc_lengths, avg_doc_len, tfidf_norms }
    }

    pub fn with_bm25(mut self, params: Bm25Params) -> Self {
        self.bm25 = params;
        self
    }

    pub fn bm25_params(&self) -> Bm25Params {
        self.bm25
    }

    pub fn analyzer(&self) -> &AnalyzerConfig {
        &self.analyzer
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.analyzer.analyze(text)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, entry_id: i64) -> Option<u32> {
        self.doc_lengths.get(&entry_id).copied()
    }

    pub fn contains(&self, entry_id: i64) -> bool {
        self.doc_lengths.contains_key(&entry_id)
    }

    pub fn entry_ids(&self) -> impl Iterator<Item = i64> + '_ {
        self.doc_lengths.keys().copied()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn tf(&self, term: &str, entry_id: i64) -> u32 {
        let list = self.postings(term);
        match list.binary_search_by_key(&entry_id, |p| p.entry_id) {
            Ok(i) => list[i].tf,
            Err(_) => 0,
        }
    }

    fn require(&self, entry_id: i64) -> Result<()> {
        if self.contains(entry_id) {
            Ok(())
        } else {
            Err(Error::NotFound { kind: "entry", id: entry_id })
        }
    }

    /// Cosine similarity between the query and passage TF-IDF vectors.
    /// Query terms absent from the index carry no weight.
    pub fn score_tfidf(&self, query_tokens: &[String], entry_id: i64) -> Result<f64> {
        self.require(entry_id)?;
        Ok(self.prepare(query_tokens, Scorer::TfIdf).score(self, entry_id))
    }

    /// BM25 score over the distinct query terms.
    pub fn score_bm25(&self, query_tokens: &[String], entry_id: i64, params: Bm25Params) -> Result<f64> {
        self.require(entry_id)?;
        Ok(self.prepare(query_tokens, Scorer::Bm25).score_bm25_with(self, entry_id, params))
    }

    /// Scores one passage with the chosen scorer (BM25 uses the index's parameters).
    pub fn score(&self, query_tokens: &[String], entry_id: i64, scorer: Scorer) -> Result<f64> {
        self.require(entry_id)?;
        Ok(self.prepare(query_tokens, scorer).score(self, entry_id))
    }

    pub fn prepare(&self, query_tokens: &[String], scorer: Scorer) -> PreparedQuery {
        let n = self.doc_count();
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for t in query_tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let mut terms = Vec::new();
        let mut norm_sq = 0.0;
        for (term, qtf) in counts {
            let df = self.df(term);
            if df == 0 {
                continue;
            }
            let weight = match scorer {
                Scorer::TfIdf => tfidf_weight(qtf, df, n),
                Scorer::Bm25 => bm25_idf(df, n),
            };
            norm_sq += weight * weight;
            terms.push(QueryTerm { term: term.to_string(), df, weight });
        }
        PreparedQuery { scorer, terms, norm: norm_sq.sqrt() }
    }

    /// Top-`k` passages by raw score, descending, ties by ascending entry id.
    /// Zero-score passages are never returned.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        scorer: Scorer,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<(i64, f64)>> {
        self.search_tokens(&self.analyze(query), k, scorer, filter)
    }

    pub fn search_tokens(
        &self,
        query_tokens: &[String],
        k: usize,
        scorer: Scorer,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<(i64, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let prepared = self.prepare(query_tokens, scorer);
        let mut candidates = BTreeSet::new();
        for qt in &prepared.terms {
            for p in self.postings(&qt.term) {
                if filter.is_none_or(|f| f.contains(&p.entry_id)) {
                    candidates.insert(p.entry_id);
                }
            }
        }
        let mut scored: Vec<(i64, f64)> =
            candidates.into_iter().map(|id| (id, prepared.score(self, id))).filter(|(_, s)| *s > 0.0).collect();
        sort_ranked(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }
}

/// Descending score, ascending id on ties.
pub fn sort_ranked(list: &mut [(i64, f64)]) {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

#[derive(Debug, Clone)]
struct QueryTerm {
    term: String,
    df: usize,
    /// TF-IDF query weight, or BM25 idf.
    weight: f64,
}

/// Query statistics computed once and reused for every scored passage.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    scorer: Scorer,
    terms: Vec<QueryTerm>,
    norm: f64,
}

impl PreparedQuery {
    pub fn score(&self, index: &InvertedIndex, entry_id: i64) -> f64 {
        match self.scorer {
            Scorer::TfIdf => self.score_tfidf(index, entry_id),
            Scorer::Bm25 => self.score_bm25_with(index, entry_id, index.bm25),
        }
    }

    fn score_tfidf(&self, index: &InvertedIndex, entry_id: i64) -> f64 {
        let doc_norm = index.tfidf_norms.get(&entry_id).copied().unwrap_or(0.0);
        if self.norm == 0.0 || doc_norm == 0.0 {
            return 0.0;
        }
        let n = index.doc_count();
        let dot: f64 =
            self.terms.iter().map(|qt| qt.weight * tfidf_weight(index.tf(&qt.term, entry_id), qt.df, n)).sum();
        (dot / (self.norm * doc_norm)).clamp(0.0, 1.0)
    }

    fn score_bm25_with(&self, index: &InvertedIndex, entry_id: i64, params: Bm25Params) -> f64 {
        let dl = index.doc_len(entry_id).unwrap_or(0) as f64;
        let avgdl = index.avg_doc_len;
        let length_norm = if avgdl > 0.0 { 1.0 - params.b + params.b * dl / avgdl } else { 1.0 };
        self.terms
            .iter()
            .map(|qt| {
                let tf = index.tf(&qt.term, entry_id) as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    qt.weight * tf * (params.k1 + 1.0) / (tf + params.k1 * length_norm)
                }
            })
            .sum()
    }
}

const INDEX_MAGIC: &[u8; 4] = b"CHLX";
/// Current on-disk index version.
pub const INDEX_VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("index term is not utf-8: {e}")))
}

impl InvertedIndex {
    /// Writes the index in the versioned little-endian layout described in `docs/data-format.md`.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u8(self.analyzer.lowercase as u8)?;
        w.write_u8(match self.analyzer.stemmer {
            Stemmer::None => 0,
            Stemmer::LightSuffix => 1,
        })?;
        w.write_u32::<LittleEndian>(self.analyzer.stopwords.len() as u32)?;
        for s in &self.analyzer.stopwords {
            write_str(w, s)?;
        }
        w.write_f64::<LittleEndian>(self.bm25.k1)?;
        w.write_f64::<LittleEndian>(self.bm25.b)?;
        w.write_u32::<LittleEndian>(self.doc_lengths.len() as u32)?;
        for (&id, &len) in &self.doc_lengths {
            w.write_i64::<LittleEndian>(id)?;
            w.write_u32::<LittleEndian>(len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(w, term)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for p in list {
                w.write_i64::<LittleEndian>(p.entry_id)?;
                w.write_u32::<LittleEndian>(p.tf)?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format("not a lexical index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("lexical index version {version}, expected {INDEX_VERSION}")));
        }
        let lowercase = r.read_u8()? != 0;
        let stemmer = match r.read_u8()? {
            0 => Stemmer::None,
            1 => Stemmer::LightSuffix,
            other => return Err(Error::Format(format!("unknown stemmer tag {other}"))),
        };
        let mut stopwords = BTreeSet::new();
        for _ in 0..r.read_u32::<LittleEndian>()? {
            stopwords.insert(read_str(r)?);
        }
        let bm25 = Bm25Params { k1: r.read_f64::<LittleEndian>()?, b: r.read_f64::<LittleEndian>()? };
        let mut doc_lengths = BTreeMap::new();
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let id = r.read_i64::<LittleEndian>()?;
            doc_lengths.insert(id, r.read_u32::<LittleEndian>()?);
        }
        let mut postings = BTreeMap::new();
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let term = read_str(r)?;
            let count = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let entry_id = r.read_i64::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                if !doc_lengths.contains_key(&entry_id) {
                    return Err(Error::Format(format!("posting for unknown entry {entry_id}")));
                }
                list.push(Posting { entry_id, tf });
            }
            postings.insert(term, list);
        }
        let analyzer = AnalyzerConfig { lowercase, stopwords, stemmer };
        Ok(Self::from_parts(analyzer, bm25, postings, doc_lengths))
    }
}
