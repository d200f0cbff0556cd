//! Exact cosine retrieval over a [`CaptionIndex`].
//!
//! Every ranking sorts by score descending and breaks ties by ascending
//! caption id. The optimized scan splits rows into fixed-size blocks scored in
//! parallel, keeps a bounded heap per block and merges; block boundaries do
//! not depend on the thread count, so results never depend on scheduling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{clamp_unit, cosine_similarity, dot, fuse, EmbeddingVector, FusionWeights};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::index::CaptionIndex;

const BLOCK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Reranked,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Initial => "initial",
            Stage::Reranked => "reranked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub caption_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub k: usize,
    pub stage: Stage,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.caption_id.as_str())
    }

    /// 1-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.caption_id == id).map(|p| p + 1)
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
        self.k = k;
    }
}

/// Total order used by every ranking: higher score first, then smaller id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    Dense,
    Sparse,
}

impl fmt::Display for TextSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextSource::Dense => "dense",
            TextSource::Sparse => "sparse",
        })
    }
}

impl FromStr for TextSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dense" => Ok(TextSource::Dense),
            "sparse" => Ok(TextSource::Sparse),
            other => Err(format!("unknown text source {other:?}")),
        }
    }
}

/// One evaluation query: an image embedding plus predicted texts and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBundle {
    pub image_id: String,
    pub e_img: EmbeddingVector,
    pub dense_pred_text: Option<String>,
    pub sparse_pred_text: Option<String>,
    pub gt_caption_ids: Vec<String>,
    /// Comma-separated ground-truth items; sets the per-query k for mAP.
    pub gt_sparse_caption: Option<String>,
}

impl QueryBundle {
    pub fn new(image_id: impl Into<String>, e_img: EmbeddingVector) -> Self {
        Self {
            image_id: image_id.into(),
            e_img,
            dense_pred_text: None,
            sparse_pred_text: None,
            gt_caption_ids: Vec::new(),
            gt_sparse_caption: None,
        }
    }

    pub fn prediction(&self, source: TextSource) -> Result<&str> {
        let text = match source {
            TextSource::Dense => self.dense_pred_text.as_deref(),
            TextSource::Sparse => self.sparse_pred_text.as_deref(),
        };
        text.filter(|t| !t.trim().is_empty()).ok_or_else(|| {
            Error::MissingPredictionText(
                self.image_id.clone(),
                match source {
                    TextSource::Dense => "dense",
                    TextSource::Sparse => "sparse",
                },
            )
        })
    }
}

struct HeapEntry<'a> {
    score: f64,
    id: &'a str,
}

// Max-heap on "worse": the root is the weakest hit kept so far.
impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.score, self.id, other.score, other.id)
    }
}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

fn check_dim(index: &CaptionIndex, dim: usize) -> Result<()> {
    if dim != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: dim,
        });
    }
    Ok(())
}

/// Bounded-heap top-k over all rows, scored by `score(row)`.
fn scan_topk<F>(index: &CaptionIndex, k: usize, score: F) -> Vec<RankedEntry>
where
    F: Fn(&[f32]) -> f64 + Sync,
{
    let k = k.min(index.len());
    let dim = index.dim();
    let block_top = |block_no: usize, block: &[f32]| -> Vec<HeapEntry<'_>> {
        let first = block_no * BLOCK_ROWS;
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for (offset, row) in block.chunks_exact(dim).enumerate() {
            let entry = HeapEntry {
                score: clamp_unit(score(row)),
                id: &index.caption(first + offset).id,
            };
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(worst) = heap.peek() {
                if entry < *worst {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
        heap.into_vec()
    };

    let matrix = index.matrix();
    let mut hits: Vec<HeapEntry<'_>> = if index.len() > BLOCK_ROWS {
        matrix
            .par_chunks(BLOCK_ROWS * dim)
            .enumerate()
            .flat_map_iter(|(i, block)| block_top(i, block))
            .collect()
    } else {
        block_top(0, matrix)
    };
    hits.sort_unstable();
    hits.truncate(k);
    hits.into_iter()
        .map(|h| RankedEntry {
            caption_id: h.id.to_string(),
            score: h.score,
        })
        .collect()
}

fn unit_query(query: &EmbeddingVector) -> Result<EmbeddingVector> {
    if query.is_normalized() {
        Ok(query.clone())
    } else {
        query.l2_normalize()
    }
}

/// The `k` rows with highest cosine similarity to `query`.
pub fn search_topk(query: &EmbeddingVector, index: &CaptionIndex, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    check_dim(index, query.dim())?;
    let q = unit_query(query)?;
    let qv = q.values();
    let entries = scan_topk(index, k, |row| dot(qv, row));
    Ok(RankedList {
        entries,
        k,
        stage: Stage::Initial,
    })
}

/// Reference implementation of [`search_topk`]: score everything, sort, cut.
pub fn search_topk_naive(
    query: &EmbeddingVector,
    index: &CaptionIndex,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    check_dim(index, query.dim())?;
    let q = unit_query(query)?;
    let mut scored = Vec::with_capacity(index.len());
    for (row, caption) in index.captions().iter().enumerate() {
        let v = EmbeddingVector::new(index.row(row).to_vec())?;
        scored.push((caption.id.as_str(), cosine_similarity(&q, &v)?));
    }
    scored.sort_by(|a, b| rank_order(a.1, a.0, b.1, b.0));
    scored.truncate(k);
    Ok(RankedList {
        entries: scored
            .into_iter()
            .map(|(id, score)| RankedEntry {
                caption_id: id.to_string(),
                score,
            })
            .collect(),
        k,
        stage: Stage::Initial,
    })
}

/// `normalize(w_img * e_img + w_text * TE(prediction))` for the chosen text source.
pub fn fused_query(
    bundle: &QueryBundle,
    w: FusionWeights,
    text_source: TextSource,
    encoder: &dyn TextEncoder,
) -> Result<EmbeddingVector> {
    let text = bundle.prediction(text_source)?;
    let e_text = encoder.encode(text)?;
    let e_img = unit_query(&bundle.e_img)?;
    fuse(&e_img, &e_text, w, true)
}

/// Uni-directional fused retrieval of the top `k` captions.
pub fn search_fused(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    w: FusionWeights,
    text_source: TextSource,
    encoder: &dyn TextEncoder,
    k: usize,
) -> Result<RankedList> {
    let q = fused_query(bundle, w, text_source, encoder)?;
    search_topk(&q, index, k)
}

/// Best caption for the fused query.
pub fn search_top1_fused(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    w: FusionWeights,
    text_source: TextSource,
    encoder: &dyn TextEncoder,
) -> Result<RankedList> {
    search_fused(bundle, index, w, text_source, encoder, 1)
}

/// Bi-directional fusion: each candidate row is fused with the query image
/// before scoring, `normalize(wi_img * e_img + wi_text * E_c)`.
///
/// Uses `‖a·img + b·c‖² = a² + b² + 2ab·(img·c)` for unit `img` and `c`, so
/// the index is never copied or written. A candidate whose fused vector
/// vanishes scores 0.
pub fn search_bidirectional(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    w_query: FusionWeights,
    w_index: FusionWeights,
    text_source: TextSource,
    encoder: &dyn TextEncoder,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    check_dim(index, bundle.e_img.dim())?;
    let q = fused_query(bundle, w_query, text_source, encoder)?;
    check_dim(index, q.dim())?;
    let img = unit_query(&bundle.e_img)?;
    let (qv, iv) = (q.values(), img.values());
    let (a, b) = (w_index.w_img(), w_index.w_text());
    let q_img = dot(qv, iv);
    let entries = scan_topk(index, k, |row| {
        let norm_sq = a * a + b * b + 2.0 * a * b * dot(iv, row);
        if norm_sq <= 1e-24 {
            return 0.0;
        }
        (a * q_img + b * dot(qv, row)) / norm_sq.sqrt()
    });
    Ok(RankedList {
        entries,
        k,
        stage: Stage::Initial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{SyntheticEncoder, TableEncoder};
    use crate::index::Caption;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap().l2_normalize().unwrap()
    }

    fn index_of(rows: &[(&str, &[f32])]) -> CaptionIndex {
        let captions = rows.iter().map(|(id, _)| Caption::dense(*id, *id)).collect();
        let embeddings = rows.iter().map(|(_, v)| unit(v)).collect();
        CaptionIndex::from_parts(captions, embeddings, "test").unwrap()
    }

    fn random_index(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> CaptionIndex {
        let captions = (0..n).map(|i| Caption::dense(format!("c{i:05}"), "x")).collect();
        let embeddings = (0..n)
            .map(|_| unit(&(0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>()))
            .collect();
        CaptionIndex::from_parts(captions, embeddings, "random").unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
        unit(&(0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn single_row_clamps_k() {
        let index = index_of(&[("only", &[0.0, 1.0])]);
        let r = search_topk(&unit(&[1.0, 0.0]), &index, 5).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.entries[0].caption_id, "only");
    }

    #[test]
    fn analytic_top2() {
        let index = index_of(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[0.6, 0.8])]);
        let r = search_topk(&unit(&[1.0, 0.0]), &index, 2).unwrap();
        let ids: Vec<_> = r.ids().collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((r.entries[0].score - 1.0).abs() < 1e-7);
        assert!((r.entries[1].score - 0.6).abs() < 1e-7);
    }

    #[test]
    fn ties_break_by_id() {
        let index = index_of(&[("b", &[0.6, 0.8]), ("a", &[0.6, 0.8])]);
        let r = search_topk(&unit(&[1.0, 0.0]), &index, 2).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(r.entries[0].score, r.entries[1].score);
    }

    #[test]
    fn naive_full_ranking_and_errors() {
        let index = index_of(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let r = search_topk_naive(&unit(&[1.0, 1.0]), &index, 10).unwrap();
        assert_eq!(r.len(), 2);
        assert!(matches!(
            search_topk_naive(&unit(&[1.0, 0.0, 0.0]), &index, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(search_topk(&unit(&[1.0, 0.0]), &index, 0), Err(Error::InvalidK)));
    }

    #[test]
    fn optimized_matches_naive_on_multi_block_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let index = random_index(&mut rng, 3000, 16);
        for k in [1, 7, 100, 3000, 5000] {
            let q = random_unit(&mut rng, 16);
            assert_eq!(search_topk(&q, &index, k).unwrap(), search_topk_naive(&q, &index, k).unwrap());
        }
    }

    #[test]
    fn identical_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let index = random_index(&mut rng, 5000, 8);
        let q = random_unit(&mut rng, 8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| search_topk(&q, &index, 50).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    fn bundle(img: &[f32], dense: &str) -> QueryBundle {
        let mut b = QueryBundle::new("q", unit(img));
        b.dense_pred_text = Some(dense.to_string());
        b.sparse_pred_text = Some(dense.to_string());
        b
    }

    #[test]
    fn image_only_fusion_equals_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let index = random_index(&mut rng, 200, 32);
        let enc = SyntheticEncoder::new(32, 3);
        let b = QueryBundle {
            dense_pred_text: Some("grilled chicken".into()),
            ..QueryBundle::new("q", random_unit(&mut rng, 32))
        };
        let fused =
            search_top1_fused(&b, &index, FusionWeights::IMAGE_ONLY, TextSource::Dense, &enc).unwrap();
        let base = search_topk(&b.e_img, &index, 1).unwrap();
        assert_eq!(fused, base);
    }

    #[test]
    fn missing_prediction_text() {
        let index = index_of(&[("a", &[1.0, 0.0])]);
        let enc = TableEncoder::new(vec![]).unwrap();
        let b = QueryBundle::new("img7", unit(&[1.0, 0.0]));
        assert!(matches!(
            search_top1_fused(&b, &index, FusionWeights::default(), TextSource::Sparse, &enc),
            Err(Error::MissingPredictionText(id, "sparse")) if id == "img7"
        ));
    }

    fn two_dim_fixture() -> (CaptionIndex, TableEncoder) {
        let index = index_of(&[
            ("a", &[1.0, 0.0]),
            ("b", &[0.0, 1.0]),
            ("c", &[-0.6, 0.8]),
        ]);
        let enc = TableEncoder::new(vec![("pred".to_string(), unit(&[0.0, 1.0]))]).unwrap();
        (index, enc)
    }

    #[test]
    fn bidirectional_degenerate_weights() {
        let (index, enc) = two_dim_fixture();
        let b = bundle(&[0.8, 0.6], "pred");
        let w = FusionWeights::default();
        let uni = search_fused(&b, &index, w, TextSource::Dense, &enc, 3).unwrap();
        let bi_text = search_bidirectional(&b, &index, w, FusionWeights::TEXT_ONLY, TextSource::Dense, &enc, 3)
            .unwrap();
        assert_eq!(uni, bi_text);

        let bi_img = search_bidirectional(&b, &index, w, FusionWeights::IMAGE_ONLY, TextSource::Dense, &enc, 3)
            .unwrap();
        assert_eq!(bi_img.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(bi_img.entries.windows(2).all(|p| p[0].score == p[1].score));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bidirectional_hand_computed() {
        // img = (0.8, 0.6); text = (0, 1); query weights (0.5, 0.5)
        // q_raw = (0.4, 0.8), |q_raw| = sqrt(0.8) -> q = (0.4472136, 0.8944272)
        // index weights (0.5, 0.5):
        //   a: (0.9, 0.3)/|.|=0.9486833 -> (0.9486833, 0.3162278); q· = 0.7071068
        //   b: (0.4, 0.8)/0.8944272     -> (0.4472136, 0.8944272); q· = 1.0
        //   c: (0.1, 0.7)/0.7071068     -> (0.1414214, 0.9899495); q· = 0.9486833
        let (index, enc) = two_dim_fixture();
        let b = bundle(&[0.8, 0.6], "pred");
        let half = FusionWeights::new(0.5, 0.5).unwrap();
        let r = search_bidirectional(&b, &index, half, half, TextSource::Dense, &enc, 3).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        let expected = [1.0, 0.9486833, 0.7071068];
        for (e, x) in r.entries.iter().zip(expected) {
            assert!((e.score - x).abs() < 1e-6, "{} vs {x}", e.score);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn topk_is_prefix_of_topk_plus_one(seed in 0u64..1000, k in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 60, 8);
            let q = random_unit(&mut rng, 8);
            let small = search_topk(&q, &index, k).unwrap();
            let big = search_topk(&q, &index, k + 1).unwrap();
            prop_assert_eq!(&small.entries[..], &big.entries[..small.len()]);
        }

        #[test]
        fn positive_scaling_keeps_ids(seed in 0u64..1000, lambda in 0.01f32..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 80, 16);
            let q = random_unit(&mut rng, 16);
            let scaled = EmbeddingVector::new(q.values().iter().map(|x| x * lambda).collect()).unwrap();
            let a: Vec<String> = search_topk(&q, &index, 10).unwrap().ids().map(String::from).collect();
            let b: Vec<String> = search_topk(&scaled, &index, 10).unwrap().ids().map(String::from).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn renormalized_fusion_keeps_ranking(seed in 0u64..1000, g in 0.05f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 80, 16);
            let img = random_unit(&mut rng, 16);
            let text = random_unit(&mut rng, 16);
            let w = FusionWeights::from_text_weight(g).unwrap();
            let raw = fuse(&img, &text, w, false).unwrap();
            let unit_q = fuse(&img, &text, w, true).unwrap();
            let a: Vec<String> = search_topk(&raw, &index, 80).unwrap().ids().map(String::from).collect();
            let b: Vec<String> = search_topk(&unit_q, &index, 80).unwrap().ids().map(String::from).collect();
            prop_assert_eq!(a, b);
        }
    }
}
