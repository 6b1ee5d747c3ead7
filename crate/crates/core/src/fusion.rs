//! Score fusion for hybrid retrieval.
//!
//! Each arm (lexical and semantic) contributes its top `k` passages. For every
//! passage in the union both raw scores are computed exactly, min-max
//! normalized within the union, and combined:
//!
//! ```text
//! S_eq1  = alpha * s_sem + (1 - alpha) * s_ft
//! S      = gamma * S_eq1 + (1 - gamma) * mean(S_c for c in C)
//! ```
//!
//! where `S_c` is the similarity between the query and the author field `c`.
//! With no field scores the second line reduces to `S = S_eq1`.
//!
//! ```
//! use chronicle::fusion::{fuse_linear, fuse_with_fields, normalize_minmax};
//!
//! assert_eq!(normalize_minmax(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
//! assert!((fuse_linear(0.8, 0.3, 0.9).unwrap() - 0.75).abs() < 1e-12);
//! assert_eq!(fuse_with_fields(0.4, &[], 0.2).unwrap(), 0.4);
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::lexical::{AnalyzerConfig, InvertedIndex, Scorer};
use crate::vector::{Embedding, EmbeddingProvider, FieldRef, VectorStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Weight of the semantic arm against the lexical arm.
    pub alpha: f64,
    /// Weight of the combined arms against the author-field scores.
    pub gamma: f64,
    /// Per-arm retrieval depth and final result length.
    pub k: usize,
    pub fields: Vec<FieldRef>,
    pub scorer: Scorer,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { alpha: 0.9, gamma: 1.0, k: 5, fields: vec![FieldRef::author_bio()], scorer: Scorer::TfIdf }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("gamma", self.gamma)?;
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be in [0, 1], got {x}")))
    }
}

/// `(x - min) / (max - min)`; every output is 1.0 when all inputs are equal.
pub fn normalize_minmax(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score list"));
    }
    if let Some(x) = raw.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("score {x} is not finite")));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![1.0; raw.len()]);
    }
    Ok(raw.iter().map(|x| (x - min) / (max - min)).collect())
}

/// `alpha * s_sem + (1 - alpha) * s_ft`.
pub fn fuse_linear(s_sem: f64, s_ft: f64, alpha: f64) -> Result<f64> {
    check_unit("s_sem", s_sem)?;
    check_unit("s_ft", s_ft)?;
    check_unit("alpha", alpha)?;
    Ok(alpha * s_sem + (1.0 - alpha) * s_ft)
}

/// `gamma * s_linear + (1 - gamma) * mean(field_scores)`, or `s_linear` when
/// there are no field scores.
pub fn fuse_with_fields(s_linear: f64, field_scores: &[f64], gamma: f64) -> Result<f64> {
    check_unit("combined score", s_linear)?;
    check_unit("gamma", gamma)?;
    for s in field_scores {
        check_unit("field score", *s)?;
    }
    if field_scores.is_empty() {
        return Ok(s_linear);
    }
    let mean = field_scores.iter().sum::<f64>() / field_scores.len() as f64;
    Ok(gamma * s_linear + (1.0 - gamma) * mean)
}

/// A union member with both raw arm scores, before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub entry_id: i64,
    pub s_sem_raw: f64,
    pub s_ft_raw: f64,
    /// Field name (`table.column`) to similarity in `[0, 1]`.
    pub field_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub entry_id: i64,
    pub s_sem_raw: f64,
    pub s_ft_raw: f64,
    pub s_sem: f64,
    pub s_ft: f64,
    pub field_scores: BTreeMap<String, f64>,
    pub s_final: f64,
}

impl ScoredCandidate {
    /// Final score from the stored normalized components.
    pub fn recompute(&self, alpha: f64, gamma: f64) -> Result<f64> {
        let fields: Vec<f64> = self.field_scores.values().copied().collect();
        fuse_with_fields(fuse_linear(self.s_sem, self.s_ft, alpha)?, &fields, gamma)
    }
}

/// Normalizes both arms within `pool`, fuses, and sorts by descending final
/// score with ties broken by ascending entry id. Nothing is truncated.
pub fn fuse_pool(pool: &[RawCandidate], alpha: f64, gamma: f64) -> Result<Vec<ScoredCandidate>> {
    check_unit("alpha", alpha)?;
    check_unit("gamma", gamma)?;
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let sem = normalize_minmax(&pool.iter().map(|c| c.s_sem_raw).collect::<Vec<_>>())?;
    let ft = normalize_minmax(&pool.iter().map(|c| c.s_ft_raw).collect::<Vec<_>>())?;
    let mut out = Vec::with_capacity(pool.len());
    for ((c, s_sem), s_ft) in pool.iter().zip(sem).zip(ft) {
        let fields: Vec<f64> = c.field_scores.values().copied().collect();
        let s_final = fuse_with_fields(fuse_linear(s_sem, s_ft, alpha)?, &fields, gamma)?;
        out.push(ScoredCandidate {
            entry_id: c.entry_id,
            s_sem_raw: c.s_sem_raw,
            s_ft_raw: c.s_ft_raw,
            s_sem,
            s_ft,
            field_scores: c.field_scores.clone(),
            s_final,
        });
    }
    out.sort_by(|a, b| b.s_final.total_cmp(&a.s_final).then(a.entry_id.cmp(&b.entry_id)));
    Ok(out)
}

/// Lexical index, vector store and the entry-to-author map needed for field scores.
pub struct HybridIndex {
    lexical: Option<InvertedIndex>,
    vectors: VectorStore,
    entry_authors: BTreeMap<i64, i64>,
}

impl HybridIndex {
    /// Indexes every entry and the given author fields of `kb`.
    pub fn build(
        kb: &KnowledgeBase,
        provider: &dyn EmbeddingProvider,
        analyzer: AnalyzerConfig,
        fields: &[FieldRef],
    ) -> Result<Self> {
        let entries = kb.entries()?;
        let mut vectors = VectorStore::for_provider(provider);
        vectors.index_entries(provider, &entries)?;
        vectors.index_fields(provider, &kb.authors()?, fields)?;
        let lexical = if entries.is_empty() {
            None
        } else {
            Some(InvertedIndex::build(entries.iter().map(|e| (e.id, e.text.as_str())), analyzer)?)
        };
        let entry_authors = entries.iter().map(|e| (e.id, e.author_id)).collect();
        Ok(HybridIndex { lexical, vectors, entry_authors })
    }

    /// Assembles an index from stores built or loaded elsewhere.
    ///
    /// Every entry in `kb` must be present in both stores.
    pub fn from_parts(kb: &KnowledgeBase, lexical: Option<InvertedIndex>, vectors: VectorStore) -> Result<Self> {
        let entries = kb.entries()?;
        for e in &entries {
            if vectors.entry_vector(e.id).is_none() {
                return Err(Error::Integrity(format!("entry {} has no stored embedding", e.id)));
            }
            if !lexical.as_ref().is_some_and(|l| l.contains(e.id)) {
                return Err(Error::Integrity(format!("entry {} is missing from the lexical index", e.id)));
            }
        }
        let entry_authors = entries.iter().map(|e| (e.id, e.author_id)).collect();
        Ok(HybridIndex { lexical, vectors, entry_authors })
    }

    pub fn lexical(&self) -> Option<&InvertedIndex> {
        self.lexical.as_ref()
    }

    pub fn vectors(&self) -> &VectorStore {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.entry_authors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_authors.is_empty()
    }

    pub fn embed_query(&self, provider: &dyn EmbeddingProvider, query: &str) -> Result<Embedding> {
        if query.trim().is_empty() {
            return Err(Error::invalid("query is empty"));
        }
        if provider.model_id() != self.vectors.model_id() {
            return Err(Error::invalid(format!(
                "provider model {} does not match index model {}",
                provider.model_id(),
                self.vectors.model_id()
            )));
        }
        provider.embed(query)
    }

    /// Lexical arm alone: top `k` by raw lexical score.
    pub fn lexical_search(
        &self,
        query: &str,
        k: usize,
        scorer: Scorer,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<(i64, f64)>> {
        match &self.lexical {
            Some(l) => l.search(query, k, scorer, filter),
            None if k == 0 => Err(Error::invalid("k must be at least 1")),
            None => Ok(Vec::new()),
        }
    }

    /// Semantic arm alone: top `k` by cosine.
    pub fn semantic_search(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &str,
        k: usize,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<(i64, f64)>> {
        if self.is_empty() {
            return if k == 0 { Err(Error::invalid("k must be at least 1")) } else { Ok(Vec::new()) };
        }
        let q = self.embed_query(provider, query)?;
        self.vectors.search(&q, k, filter)
    }

    /// Union of both arms' top `k` with exact raw scores from both arms, in
    /// ascending entry id order.
    pub fn candidate_pool(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &str,
        params: &FusionParams,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<RawCandidate>> {
        params.validate()?;
        let Some(lexical) = &self.lexical else {
            return Ok(Vec::new());
        };
        let q = self.embed_query(provider, query)?;
        let tokens = lexical.analyze(query);
        let mut union: BTreeSet<i64> = BTreeSet::new();
        union.extend(lexical.search_tokens(&tokens, params.k, params.scorer, filter)?.into_iter().map(|(id, _)| id));
        union.extend(self.vectors.search(&q, params.k, filter)?.into_iter().map(|(id, _)| id));
        let prepared = lexical.prepare(&tokens, params.scorer);
        union
            .into_iter()
            .map(|id| {
                let author = self
                    .entry_authors
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Integrity(format!("entry {id} has no author mapping")))?;
                Ok(RawCandidate {
                    entry_id: id,
                    s_sem_raw: self.vectors.entry_similarity(&q, id)?,
                    s_ft_raw: prepared.score(lexical, id),
                    field_scores: self.vectors.field_scores(&q, author, &params.fields)?,
                })
            })
            .collect()
    }

    /// Fused ranking, at most `params.k` long.
    pub fn hybrid_search(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &str,
        params: &FusionParams,
        filter: Option<&BTreeSet<i64>>,
    ) -> Result<Vec<ScoredCandidate>> {
        let pool = self.candidate_pool(provider, query, params, filter)?;
        let mut ranked = fuse_pool(&pool, params.alpha, params.gamma)?;
        ranked.truncate(params.k);
        Ok(ranked)
    }
}
