//! Semantic arm: embedding providers, the vector store and exact cosine search.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hasher;
use std::io::{Read, Write};
use std::time::Duration;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;

use crate::error::{Error, Result};
use crate::kb::{Author, Entry};
use crate::lexical::{sort_ranked, AnalyzerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub model_id: String,
}

impl Embedding {
    /// Checks finiteness and non-emptiness; does not normalize.
    pub fn new(vector: Vec<f32>, model_id: impl Into<String>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::invalid("embedding has no components"));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("embedding has non-finite components"));
        }
        Ok(Embedding { vector, model_id: model_id.into() })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vector)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Scales to unit L2 norm. Zero vectors are rejected.
pub fn normalize(v: &mut [f32]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    Ok(())
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embeds one non-empty text into a unit-norm vector.
    fn embed(&self, text: &str) -> Result<Embedding>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic offline provider based on signed feature hashing.
///
/// Every analyzed token is hashed with a keyed SipHash; the low bits pick one
/// of `dim` buckets and the top bit picks the sign. Token counts are summed
/// and the result is L2-normalized, so passages that share tokens end up with
/// correlated vectors.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    seed: u64,
    model_id: String,
    analyzer: AnalyzerConfig,
}

impl HashingProvider {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_SEED: u64 = 0x5eed_c0de_2024_0001;

    pub fn new(dim: usize, seed: u64) -> Self {
        HashingProvider {
            dim: dim.max(1),
            seed,
            model_id: format!("hashing-{dim}-{seed:x}"),
            analyzer: AnalyzerConfig::default(),
        }
    }

    /// Signed bucket that an analyzed token contributes to.
    pub fn feature(&self, token: &str) -> (usize, f32) {
        let mut h = SipHasher13::new_with_keys(self.seed, !self.seed);
        h.write(token.as_bytes());
        let v = h.finish();
        let sign = if v >> 63 == 1 { -1.0 } else { 1.0 };
        ((v % self.dim as u64) as usize, sign)
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        HashingProvider::new(Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let mut tokens = self.analyzer.analyze(text);
        if tokens.is_empty() {
            // only stopwords or punctuation: fall back to the raw text
            tokens = AnalyzerConfig::plain().analyze(text);
        }
        if tokens.is_empty() {
            tokens.push(text.trim().to_lowercase());
        }
        let mut v = vec![0f32; self.dim];
        for t in &tokens {
            let (i, s) = self.feature(t);
            v[i] += s;
        }
        if v.iter().all(|&x| x == 0.0) {
            // signed collisions cancelled out exactly
            let (i, s) = self.feature(&tokens.join(" "));
            v[i] = s;
        }
        normalize(&mut v)?;
        Embedding::new(v, self.model_id.clone())
    }
}

/// Wire shape sent to a remote embedding endpoint.
#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct OpenAiItem {
    embedding: Vec<f32>,
}

/// Accepted response shapes: `{"embeddings": [[...], ...]}` or `{"data": [{"embedding": [...]}, ...]}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Plain { embeddings: Vec<Vec<f32>> },
    OpenAi { data: Vec<OpenAiItem> },
}

impl EmbedResponse {
    fn into_vectors(self) -> Vec<Vec<f32>> {
        match self {
            EmbedResponse::Plain { embeddings } => embeddings,
            EmbedResponse::OpenAi { data } => data.into_iter().map(|d| d.embedding).collect(),
        }
    }
}

/// Provider backed by an HTTP embedding API.
pub struct HttpEmbeddingProvider {
    endpoint: String,
    api_key: Option<String>,
    model_id: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model_id: impl Into<String>, dim: usize) -> Self {
        HttpEmbeddingProvider {
            endpoint: endpoint.into(),
            api_key,
            model_id: model_id.into(),
            dim,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or_else(|| Error::Provider { message: "empty response".into(), retryable: true })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = EmbedRequest { model: &self.model_id, input: texts };
        let resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, _) => Error::Provider {
                message: format!("embedding endpoint returned HTTP {code}"),
                retryable: code == 429 || code >= 500,
            },
            ureq::Error::Transport(t) => Error::Provider { message: t.to_string(), retryable: true },
        })?;
        let parsed: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::Provider { message: format!("malformed embedding response: {e}"), retryable: false })?;
        let vectors = parsed.into_vectors();
        if vectors.len() != texts.len() {
            return Err(Error::Provider {
                message: format!("expected {} embeddings, got {}", texts.len(), vectors.len()),
                retryable: false,
            });
        }
        vectors
            .into_iter()
            .map(|mut v| {
                if v.len() != self.dim {
                    return Err(Error::Provider {
                        message: format!("expected dim {}, got {}", self.dim, v.len()),
                        retryable: false,
                    });
                }
                normalize(&mut v)?;
                Embedding::new(v, self.model_id.clone())
            })
            .collect()
    }
}

/// A semantically indexed metadata column, e.g. `authors.bio`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FieldRef {
    pub table: String,
    pub column: String,
}

impl FieldRef {
    pub fn new(table: &str, column: &str) -> Self {
        FieldRef { table: table.into(), column: column.into() }
    }

    pub fn author_bio() -> Self {
        FieldRef::new("authors", "bio")
    }

    /// Text of this field for an author, if the field is an author column.
    pub fn author_value<'a>(&self, author: &'a Author) -> Option<&'a str> {
        if self.table != "authors" {
            return None;
        }
        match self.column.as_str() {
            "bio" => Some(&author.bio),
            "name" => Some(&author.name),
            _ => None,
        }
    }
}

impl std::fmt::Display for FieldRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl TryFrom<String> for FieldRef {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FieldRef> for String {
    fn from(f: FieldRef) -> String {
        f.to_string()
    }
}

impl std::str::FromStr for FieldRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (table, column) =
            s.split_once('.').ok_or_else(|| Error::invalid(format!("field must be table.column, got {s:?}")))?;
        if table != "authors" || !matches!(column, "bio" | "name") {
            return Err(Error::invalid(format!("field {s} cannot be semantically indexed")));
        }
        Ok(FieldRef::new(table, column))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCounts {
    pub stored: usize,
    pub skipped: usize,
}

/// Embeddings for one model: one vector per entry and per (author, field).
///
/// Entry vectors are kept in a contiguous row-major matrix for scanning.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    model_id: String,
    dim: usize,
    entry_ids: Vec<i64>,
    entry_rows: HashMap<i64, usize>,
    matrix: Vec<f32>,
    fields: BTreeMap<(i64, FieldRef), Vec<f32>>,
}

impl VectorStore {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        VectorStore {
            model_id: model_id.into(),
            dim,
            entry_ids: Vec::new(),
            entry_rows: HashMap::new(),
            matrix: Vec::new(),
            fields: BTreeMap::new(),
        }
    }

    pub fn for_provider(provider: &dyn EmbeddingProvider) -> Self {
        Self::new(provider.model_id(), provider.dim())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry_count(&self) -> usize {
        self.entry_ids.len()
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    fn check(&self, e: &Embedding) -> Result<()> {
        if e.model_id != self.model_id {
            return Err(Error::invalid(format!(
                "embedding from model {} does not belong in store for {}",
                e.model_id, self.model_id
            )));
        }
        if e.dim() != self.dim {
            return Err(Error::invalid(format!("dimension mismatch: {} vs {}", e.dim(), self.dim)));
        }
        Ok(())
    }

    /// Inserts or replaces the vector for an entry.
    pub fn upsert_entry(&mut self, entry_id: i64, e: &Embedding) -> Result<()> {
        self.check(e)?;
        match self.entry_rows.get(&entry_id) {
            Some(&row) => self.matrix[row * self.dim..(row + 1) * self.dim].copy_from_slice(&e.vector),
            None => {
                self.entry_rows.insert(entry_id, self.entry_ids.len());
                self.entry_ids.push(entry_id);
                self.matrix.extend_from_slice(&e.vector);
            }
        }
        Ok(())
    }

    pub fn upsert_field(&mut self, author_id: i64, field: &FieldRef, e: &Embedding) -> Result<()> {
        self.check(e)?;
        self.fields.insert((author_id, field.clone()), e.vector.clone());
        Ok(())
    }

    pub fn entry_vector(&self, entry_id: i64) -> Option<&[f32]> {
        self.entry_rows.get(&entry_id).map(|&row| &self.matrix[row * self.dim..(row + 1) * self.dim])
    }

    pub fn field_vector(&self, author_id: i64, field: &FieldRef) -> Option<&[f32]> {
        self.fields.get(&(author_id, field.clone())).map(Vec::as_slice)
    }

    /// Iterates `(entry id, vector)` in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (i64, &[f32])> {
        self.entry_ids.iter().zip(self.matrix.chunks_exact(self.dim.max(1))).map(|(&id, v)| (id, v))
    }

    /// Embeds and stores every entry. On provider failure the error reports how
    /// many entries were stored; re-running upserts, so indexing can resume.
    pub fn index_entries(&mut self, provider: &dyn EmbeddingProvider, entries: &[Entry]) -> Result<IndexCounts> {
        let mut counts = IndexCounts::default();
        for chunk in entries.chunks(64) {
            let texts: Vec<&str> = chunk.iter().map(|e| e.text.as_str()).collect();
            let embedded = provider
                .embed_batch(&texts)
                .map_err(|e| Error::PartialProgress { completed: counts.stored, source: Box::new(e) })?;
            for (entry, emb) in chunk.iter().zip(&embedded) {
                self.upsert_entry(entry.id, emb)?;
                counts.stored += 1;
            }
        }
        Ok(counts)
    }

    /// Embeds the given author fields. Empty values are skipped and counted.
    pub fn index_fields(
        &mut self,
        provider: &dyn EmbeddingProvider,
        authors: &[Author],
        fields: &[FieldRef],
    ) -> Result<IndexCounts> {
        let mut counts = IndexCounts::default();
        for author in authors {
            for field in fields {
                let value = field
                    .author_value(author)
                    .ok_or_else(|| Error::invalid(format!("field {field} is not indexable")))?;
                if value.trim().is_empty() {
                    counts.skipped += 1;
                    continue;
                }
                let emb = provider
                    .embed(value)
                    .map_err(|e| Error::PartialProgress { completed: counts.stored, source: Box::new(e) })?;
                self.upsert_field(author.id, field, &emb)?;
                counts.stored += 1;
            }
        }
        Ok(counts)
    }

    /// Cosine between the query and a stored entry.
    pub fn entry_similarity(&self, query: &Embedding, entry_id: i64) -> Result<f64> {
        let v = self.entry_vector(entry_id).ok_or(Error::NotFound { kind: "entry embedding", id: entry_id })?;
        cosine(&query.vector, v)
    }

    /// Exact scan: top-`k` entries by cosine, descending, ties by ascending id.
    pub fn search(&self, query: &Embedding, k: usize, filter: Option<&BTreeSet<i64>>) -> Result<Vec<(i64, f64)>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.dim() != self.dim {
            return Err(Error::invalid(format!("dimension mismatch: {} vs {}", query.dim(), self.dim)));
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(Error::invalid("query embedding is a zero vector"));
        }
        let mut scored: Vec<(i64, f64)> = self
            .entries()
            .filter(|(id, _)| filter.is_none_or(|f| f.contains(id)))
            .filter_map(|(id, v)| {
                let vn = norm(v);
                (vn > 0.0).then(|| (id, (dot(&query.vector, v) / (qn * vn)).clamp(-1.0, 1.0)))
            })
            .collect();
        sort_ranked(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }

    /// Per-field similarity mapped to `[0, 1]` via `(1 + cos) / 2`.
    /// Fields without a stored vector for this author are omitted.
    pub fn field_scores(
        &self,
        query: &Embedding,
        author_id: i64,
        fields: &[FieldRef],
    ) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for field in fields {
            if let Some(v) = self.field_vector(author_id, field) {
                out.insert(field.to_string(), cosine_to_unit(cosine(&query.vector, v)?));
            }
        }
        Ok(out)
    }
}

/// Affine map from `[-1, 1]` to `[0, 1]`.
pub fn cosine_to_unit(c: f64) -> f64 {
    ((1.0 + c) / 2.0).clamp(0.0, 1.0)
}

const STORE_MAGIC: &[u8; 4] = b"CHVS";
pub const STORE_VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn read_vec(r: &mut impl Read, dim: usize) -> Result<Vec<f32>> {
    let mut v = vec![0f32; dim];
    r.read_f32_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

impl VectorStore {
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_u32::<LittleEndian>(STORE_VERSION)?;
        write_str(w, &self.model_id)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.entry_ids.len() as u32)?;
        for (id, v) in self.entries() {
            w.write_i64::<LittleEndian>(id)?;
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        w.write_u32::<LittleEndian>(self.fields.len() as u32)?;
        for ((author, field), v) in &self.fields {
            w.write_i64::<LittleEndian>(*author)?;
            write_str(w, &field.table)?;
            write_str(w, &field.column)?;
            for &x in v {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not a vector store file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("vector store version {version}, expected {STORE_VERSION}")));
        }
        let model_id = read_str(r)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let mut store = VectorStore::new(model_id.clone(), dim);
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let id = r.read_i64::<LittleEndian>()?;
            let v = read_vec(r, dim)?;
            store.upsert_entry(id, &Embedding::new(v, model_id.clone())?)?;
        }
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let author = r.read_i64::<LittleEndian>()?;
            let field = FieldRef { table: read_str(r)?, column: read_str(r)? };
            store.fields.insert((author, field), read_vec(r, dim)?);
        }
        Ok(store)
    }
}
