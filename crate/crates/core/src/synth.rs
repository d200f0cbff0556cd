//! Seeded synthetic corpora standing in for real image-caption datasets.
//!
//! Each dish is a random set of items drawn from a pseudo-word vocabulary.
//! Its dense caption is a templated sentence over the items, and every
//! vocabulary item also becomes its own one-phrase sparse caption. The
//! "image" is the synthetic embedding of the dish's item list, optionally
//! pulled toward unrelated distractor items, plus Gaussian noise. Predicted
//! texts keep each item with probability `1 - dropout`.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{resolve_bundles, write_bundle_records, BundleRecord};
use crate::embedding::{normalize_f64, EmbeddingVector};
use crate::encoder::{write_embedding_file, SyntheticEncoder, MIN_DIM};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, EvalConfig};
use crate::index::{write_captions, Caption, CaptionIndex, CaptionKind};
use crate::metrics::{average_precision, recall_at_k};
use crate::retrieval::{search_topk_naive, QueryBundle};

pub const DENSE_CAPTIONS_FILE: &str = "captions_dense.jsonl";
pub const SPARSE_CAPTIONS_FILE: &str = "captions_sparse.jsonl";
pub const IMAGES_FILE: &str = "images.f4e";
pub const BUNDLES_FILE: &str = "bundles.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const TEMPLATES: [&str; 6] = [
    "a plate of {}",
    "a bowl with {} served warm",
    "freshly prepared {} on a dish",
    "{} arranged together on a platter",
    "a serving of {} with garnish",
    "home style {} in a shallow bowl",
];

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub vocab_size: usize,
    pub num_captions: usize,
    pub items_min: usize,
    pub items_max: usize,
    pub noise_sigma: f64,
    /// Probability that an item is left out of the predicted texts.
    pub dropout: f64,
    /// Unrelated items blended into each image embedding.
    pub distractors: usize,
    /// Weight of the distractor embedding relative to the true item embedding.
    pub distractor_weight: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            vocab_size: 300,
            num_captions: 1000,
            items_min: 3,
            items_max: 6,
            noise_sigma: 0.24,
            dropout: 0.3,
            distractors: 0,
            distractor_weight: 1.0,
            dim: 64,
            seed: 42,
        }
    }
}

impl GenParams {
    /// The item-retrieval fixture: 200 item captions, 100 queries, images
    /// pulled toward distractor items that never appear in the predictions.
    pub fn rerank_fixture(seed: u64) -> Self {
        Self {
            vocab_size: 200,
            num_captions: 100,
            items_min: 3,
            items_max: 5,
            noise_sigma: 0.05,
            dropout: 0.0,
            distractors: 4,
            distractor_weight: 1.5,
            dim: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.dim < MIN_DIM {
            return bad(format!("dim {} is below {MIN_DIM}", self.dim));
        }
        if self.num_captions == 0 {
            return bad("num_captions must be positive".into());
        }
        if self.items_min == 0 || self.items_min > self.items_max {
            return bad(format!(
                "items per caption range {}..={} is empty",
                self.items_min, self.items_max
            ));
        }
        if self.items_max + self.distractors > self.vocab_size {
            return bad(format!(
                "vocab of {} cannot supply {} items plus {} distractors",
                self.vocab_size, self.items_max, self.distractors
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!(
                "dropout {} must lie in [0, 1); 1 would leave every prediction empty",
                self.dropout
            ));
        }
        if !(self.distractor_weight >= 0.0 && self.distractor_weight.is_finite()) {
            return bad(format!("distractor weight {} must be >= 0", self.distractor_weight));
        }
        Ok(())
    }
}

/// Baseline metrics recorded at generation time with the naive scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub dense_recall_at_1: f64,
    pub dense_recall_at_5: f64,
    pub sparse_mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: GenParams,
    pub encoder_fingerprint: String,
    pub num_images: usize,
    pub num_dense_captions: usize,
    pub num_sparse_captions: usize,
    pub baseline: BaselineMetrics,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub params: GenParams,
    pub dense_captions: Vec<Caption>,
    pub item_captions: Vec<Caption>,
    pub images: Vec<(String, EmbeddingVector)>,
    pub records: Vec<BundleRecord>,
    pub dense_index: CaptionIndex,
    pub sparse_index: CaptionIndex,
    pub manifest: Manifest,
}

fn item_id(item: &str) -> String {
    format!("item-{item}")
}

fn join_items(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS[rng.gen_range(0..ONSETS.len())],
                VOWELS[rng.gen_range(0..VOWELS.len())]
            )
        })
        .collect()
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut seen = HashSet::with_capacity(size);
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let w = pseudo_word(rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn keep_with_dropout<'a>(rng: &mut ChaCha8Rng, items: &[&'a str], dropout: f64) -> Vec<&'a str> {
    let mut kept: Vec<&str> = items
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= dropout)
        .collect();
    if kept.is_empty() {
        kept.push(items[rng.gen_range(0..items.len())]);
    }
    kept.shuffle(rng);
    kept
}

/// Generates a corpus and its baseline manifest. Fully determined by `params`.
pub fn generate(params: &GenParams) -> Result<SyntheticCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let encoder = SyntheticEncoder::new(params.dim, params.seed);
    let vocab = vocabulary(&mut rng, params.vocab_size);

    let width = params.num_captions.to_string().len().max(4);
    let mut dense_captions = Vec::with_capacity(params.num_captions);
    let mut images = Vec::with_capacity(params.num_captions);
    let mut records = Vec::with_capacity(params.num_captions);
    for i in 0..params.num_captions {
        let n_items = rng.gen_range(params.items_min..=params.items_max);
        let picks: Vec<&str> = vocab
            .choose_multiple(&mut rng, n_items + params.distractors)
            .map(String::as_str)
            .collect();
        let (items, distractors) = picks.split_at(n_items);

        let dish_id = format!("dish-{i:0width$}");
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        dense_captions.push(Caption::dense(&dish_id, template.replace("{}", &join_items(items))));

        let gt_sparse = items.join(", ");
        let mut clean: Vec<f64> = encoder
            .encode_text(&gt_sparse)?
            .values()
            .iter()
            .map(|&x| x as f64)
            .collect();
        if !distractors.is_empty() {
            let d = encoder.encode_text(&distractors.join(", "))?;
            for (c, &x) in clean.iter_mut().zip(d.values()) {
                *c += params.distractor_weight * x as f64;
            }
        }
        let clean = normalize_f64(&clean)?;
        let image_id = format!("img-{i:0width$}");
        let image = encoder.perturb(&clean, params.noise_sigma, rng.gen())?;
        images.push((image_id.clone(), image));

        let dense_kept = keep_with_dropout(&mut rng, items, params.dropout);
        let sparse_kept = keep_with_dropout(&mut rng, items, params.dropout);
        let pred_template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        records.push(BundleRecord {
            image_id,
            embedding_id: None,
            dense_pred_text: Some(pred_template.replace("{}", &join_items(&dense_kept))),
            sparse_pred_text: Some(sparse_kept.join(", ")),
            gt_caption_ids: vec![dish_id],
            gt_item_ids: items.iter().map(|s| item_id(s)).collect(),
            gt_sparse_caption: Some(gt_sparse),
        });
    }

    let item_captions: Vec<Caption> = vocab
        .iter()
        .map(|w| Caption::sparse(item_id(w), w.as_str()))
        .collect();
    let dense_index = crate::index::build_index(dense_captions.clone(), &encoder)?;
    let sparse_index = crate::index::build_index(item_captions.clone(), &encoder)?;

    let baseline = naive_baseline(&records, &images, &dense_index, &sparse_index)?;
    let manifest = Manifest {
        params: params.clone(),
        encoder_fingerprint: dense_index.encoder_fingerprint().to_string(),
        num_images: images.len(),
        num_dense_captions: dense_captions.len(),
        num_sparse_captions: item_captions.len(),
        baseline,
    };
    Ok(SyntheticCorpus {
        params: params.clone(),
        dense_captions,
        item_captions,
        images,
        records,
        dense_index,
        sparse_index,
        manifest,
    })
}

/// Image-only metrics computed with the reference full-sort scan.
fn naive_baseline(
    records: &[BundleRecord],
    images: &[(String, EmbeddingVector)],
    dense: &CaptionIndex,
    sparse: &CaptionIndex,
) -> Result<BaselineMetrics> {
    let n = records.len() as f64;
    let (mut r1, mut r5, mut ap_sum) = (0.0, 0.0, 0.0);
    for (rec, (_, img)) in records.iter().zip(images) {
        let ranked = search_topk_naive(img, dense, 5)?;
        r1 += recall_at_k(&ranked, &rec.gt_caption_ids, 1) as f64;
        r5 += recall_at_k(&ranked, &rec.gt_caption_ids, 5) as f64;

        let k = rec.gt_item_ids.len();
        let ranked = search_topk_naive(img, sparse, k.max(5))?;
        let gt: HashSet<&str> = rec.gt_item_ids.iter().map(String::as_str).collect();
        ap_sum += average_precision(&ranked, &gt, k)?;
    }
    Ok(BaselineMetrics {
        dense_recall_at_1: r1 / n,
        dense_recall_at_5: r5 / n,
        sparse_mean_ap: ap_sum / n,
    })
}

impl SyntheticCorpus {
    pub fn encoder(&self) -> SyntheticEncoder {
        SyntheticEncoder::new(self.params.dim, self.params.seed)
    }

    pub fn bundles(&self, kind: CaptionKind) -> Result<Vec<QueryBundle>> {
        resolve_bundles(&self.records, &self.images, kind)
    }

    pub fn index_for(&self, kind: CaptionKind) -> &CaptionIndex {
        match kind {
            CaptionKind::Dense => &self.dense_index,
            CaptionKind::Sparse => &self.sparse_index,
        }
    }

    /// Writes captions, images, bundles and the manifest into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_captions(&self.dense_captions, &dir.join(DENSE_CAPTIONS_FILE))?;
        write_captions(&self.item_captions, &dir.join(SPARSE_CAPTIONS_FILE))?;
        write_embedding_file(&self.images, &dir.join(IMAGES_FILE))?;
        write_bundle_records(&self.records, &dir.join(BUNDLES_FILE))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    /// Re-evaluates the image-only baseline through the optimized pipeline.
    pub fn baseline_report(&self, kind: CaptionKind) -> Result<crate::eval::EvalReport> {
        let bundles = self.bundles(kind)?;
        evaluate_corpus(
            "baseline",
            &bundles,
            self.index_for(kind),
            &EvalConfig::baseline(),
            &self.encoder(),
        )
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
