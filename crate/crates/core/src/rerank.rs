//! Item-level max-similarity re-ranking.
//!
//! A sparse prediction such as `"chicken, rice, curry leaves"` is split into
//! item phrases, each phrase is embedded on its own, and every candidate
//! caption is re-scored by its best cosine match against any item.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{clamp_unit, dot, EmbeddingVector, FusionWeights};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::index::CaptionIndex;
use crate::retrieval::{rank_order, search_fused, QueryBundle, RankedEntry, RankedList, Stage, TextSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedItems {
    pub phrases: Vec<String>,
    pub source_text: String,
}

impl ParsedItems {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Comma-split, trimmed, lowercased, de-duplicated (first occurrence wins).
pub fn parse_items(sparse_text: &str) -> Result<ParsedItems> {
    let mut seen = HashSet::new();
    let phrases: Vec<String> = sparse_text
        .split(',')
        .map(|p| p.trim().to_lowercase())
        .filter(|p| !p.is_empty())
        .filter(|p| seen.insert(p.clone()))
        .collect();
    if phrases.is_empty() {
        return Err(Error::NoItems(sparse_text.to_string()));
    }
    Ok(ParsedItems {
        phrases,
        source_text: sparse_text.to_string(),
    })
}

/// Optional knobs for [`rerank_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RerankOptions {
    /// Weight of the incoming score in `(1 - blend) * max_sim + blend * score`.
    /// Zero replaces scores outright.
    pub blend: f64,
}

/// Re-scores `candidates` by their maximum cosine similarity to any item.
pub fn rerank(
    candidates: &RankedList,
    items: &ParsedItems,
    index: &CaptionIndex,
    encoder: &dyn TextEncoder,
) -> Result<RankedList> {
    rerank_with(candidates, items, index, encoder, RerankOptions::default())
}

pub fn rerank_with(
    candidates: &RankedList,
    items: &ParsedItems,
    index: &CaptionIndex,
    encoder: &dyn TextEncoder,
    options: RerankOptions,
) -> Result<RankedList> {
    if items.is_empty() {
        return Err(Error::NoItems(items.source_text.clone()));
    }
    let phrases: Vec<&str> = items.phrases.iter().map(String::as_str).collect();
    let item_vectors = encoder.encode_batch(&phrases)?;
    rerank_with_vectors(candidates, &item_vectors, index, options)
}

/// Re-ranking against already-embedded items.
pub fn rerank_with_vectors(
    candidates: &RankedList,
    item_vectors: &[EmbeddingVector],
    index: &CaptionIndex,
    options: RerankOptions,
) -> Result<RankedList> {
    if item_vectors.is_empty() {
        return Err(Error::NoItems(String::new()));
    }
    if let Some(v) = item_vectors.iter().find(|v| v.dim() != index.dim()) {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: v.dim(),
        });
    }
    let items: Vec<EmbeddingVector> = item_vectors
        .iter()
        .map(|v| if v.is_normalized() { Ok(v.clone()) } else { v.l2_normalize() })
        .collect::<Result<_>>()?;

    let mut entries = candidates
        .entries
        .iter()
        .map(|c| {
            let row = index
                .position(&c.caption_id)
                .ok_or_else(|| Error::UnknownCandidateId(c.caption_id.clone()))?;
            let row = index.row(row);
            let max_sim = items
                .iter()
                .map(|p| clamp_unit(dot(row, p.values())))
                .fold(f64::NEG_INFINITY, f64::max);
            let score = if options.blend == 0.0 {
                max_sim
            } else {
                (1.0 - options.blend) * max_sim + options.blend * c.score
            };
            Ok(RankedEntry {
                caption_id: c.caption_id.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| rank_order(a.score, &a.caption_id, b.score, &b.caption_id));
    Ok(RankedList {
        entries,
        k: candidates.k,
        stage: Stage::Reranked,
    })
}

/// Default size of the initial candidate pool for a final list of `k`.
pub fn default_pool_size(k: usize) -> usize {
    50.max(5 * k)
}

/// Fused top-`pool` retrieval with the sparse prediction, item re-ranking, then cut to `k`.
pub fn retrieve_and_rerank(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    w: FusionWeights,
    pool: usize,
    k: usize,
    encoder: &dyn TextEncoder,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    if pool < k {
        return Err(Error::ConfigConflict(format!(
            "candidate pool {pool} is smaller than k {k}"
        )));
    }
    let items = parse_items(bundle.prediction(TextSource::Sparse)?)?;
    let initial = search_fused(bundle, index, w, TextSource::Sparse, encoder, pool)?;
    let mut out = rerank(&initial, &items, index, encoder)?;
    out.truncate(k);
    Ok(out)
}
