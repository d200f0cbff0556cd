//! Recall@k, truncated average precision and the per-image k rule.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::rerank::parse_items;
use crate::retrieval::RankedList;

/// 1 if any ground-truth id appears in the first `k` entries, else 0.
pub fn recall_at_k<S: AsRef<str>>(ranked: &RankedList, gt_ids: &[S], k: usize) -> u8 {
    let hit = ranked
        .ids()
        .take(k)
        .any(|id| gt_ids.iter().any(|g| g.as_ref() == id));
    hit as u8
}

/// Average precision of the first `k` entries against `gt_ids`.
///
/// `AP = (1/|gt|) · Σ_{r ≤ k, entry r ∈ gt} hits(r) / r`. The denominator is
/// the ground-truth size, so relevant ids missing from the list still count.
pub fn average_precision(ranked: &RankedList, gt_ids: &HashSet<&str>, k: usize) -> Result<f64> {
    if gt_ids.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut counted = HashSet::new();
    for (r, id) in ranked.ids().take(k).enumerate() {
        if gt_ids.contains(id) && counted.insert(id) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / gt_ids.len() as f64)
}

/// Number of distinct items in a ground-truth sparse caption.
pub fn derive_k(gt_sparse_caption: &str) -> Result<usize> {
    Ok(parse_items(gt_sparse_caption)?.len())
}
