//! Evaluation protocol: Recall@1/@5 for single-caption retrieval and
//! variable-k mAP for item retrieval, plus fusion-weight sweeps.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::FusionWeights;
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::index::{CaptionIndex, CaptionKind};
use crate::metrics::{average_precision, derive_k, recall_at_k};
use crate::rerank::{default_pool_size, parse_items, rerank};
use crate::retrieval::{search_bidirectional, search_fused, search_topk, QueryBundle, RankedList, TextSource};

/// Which retrieval pipeline to run per query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Query-side fusion weights. `w_text == 0` without bi-directional fusion
    /// is the image-only baseline and needs no prediction text.
    pub weights: FusionWeights,
    pub text_source: TextSource,
    pub bidirectional: bool,
    pub index_weights: FusionWeights,
    pub rerank: bool,
    /// Initial candidate pool for re-ranking; `None` uses `max(50, 5k)`.
    pub pool: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            weights: FusionWeights::QUERY_DEFAULT,
            text_source: TextSource::Dense,
            bidirectional: false,
            index_weights: FusionWeights::INDEX_DEFAULT,
            rerank: false,
            pool: None,
        }
    }
}

impl EvalConfig {
    pub fn baseline() -> Self {
        Self {
            weights: FusionWeights::IMAGE_ONLY,
            ..Self::default()
        }
    }

    pub fn fused(weights: FusionWeights, text_source: TextSource) -> Self {
        Self {
            weights,
            text_source,
            ..Self::default()
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.weights.w_text() == 0.0 && !self.bidirectional
    }

    /// Rejects configurations that cannot run against `index`.
    pub fn check(&self, index: &CaptionIndex) -> Result<()> {
        if self.rerank && index.kind() != CaptionKind::Sparse {
            return Err(Error::ConfigConflict(
                "re-ranking needs a sparse caption index".into(),
            ));
        }
        if self.pool == Some(0) {
            return Err(Error::ConfigConflict("candidate pool must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub w_img: f64,
    pub w_text: f64,
    pub text_source: TextSource,
    pub bidirectional: bool,
    pub index_w_img: Option<f64>,
    pub index_w_text: Option<f64>,
    pub rerank: bool,
    pub pool: Option<usize>,
    pub encoder_fingerprint: String,
    pub index_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub image_id: String,
    pub k: usize,
    /// Best 1-based rank of any ground-truth id within the retrieved depth.
    pub gt_rank: Option<usize>,
    pub ap: Option<f64>,
    pub hit_at_1: bool,
    pub hit_at_5: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_name: String,
    pub config: ReportConfig,
    pub num_queries: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub mean_ap: Option<f64>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    /// One table-style line: `name | R@1 | R@5 [| mAP]`.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "{} | R@1 {:.4} | R@5 {:.4}",
            self.corpus_name, self.recall_at_1, self.recall_at_5
        );
        if let Some(m) = self.mean_ap {
            s.push_str(&format!(" | mAP {m:.4}"));
        }
        s
    }
}

fn query_k(bundle: &QueryBundle, kind: CaptionKind) -> Result<usize> {
    match kind {
        CaptionKind::Dense => Ok(1),
        CaptionKind::Sparse => match &bundle.gt_sparse_caption {
            Some(text) => derive_k(text),
            None => Ok(bundle.gt_caption_ids.len()),
        },
    }
}

/// Ranked list for one bundle under `config`, at least `depth` long when the index allows.
pub fn run_query(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    config: &EvalConfig,
    encoder: &dyn TextEncoder,
    depth: usize,
) -> Result<RankedList> {
    let initial = |k: usize| -> Result<RankedList> {
        if config.bidirectional {
            search_bidirectional(
                bundle,
                index,
                config.weights,
                config.index_weights,
                config.text_source,
                encoder,
                k,
            )
        } else if config.is_baseline() {
            search_topk(&bundle.e_img, index, k)
        } else {
            search_fused(bundle, index, config.weights, config.text_source, encoder, k)
        }
    };
    if !config.rerank {
        return initial(depth);
    }
    let items = parse_items(bundle.prediction(TextSource::Sparse)?)?;
    let pool = config.pool.unwrap_or_else(|| default_pool_size(depth));
    let mut out = rerank(&initial(pool)?, &items, index, encoder)?;
    out.truncate(depth.min(pool));
    Ok(out)
}

fn evaluate_one(
    bundle: &QueryBundle,
    index: &CaptionIndex,
    config: &EvalConfig,
    encoder: &dyn TextEncoder,
) -> Result<QueryResult> {
    let k = query_k(bundle, index.kind())?;
    if let Some(pool) = config.pool.filter(|_| config.rerank) {
        if pool < k {
            return Err(Error::ConfigConflict(format!(
                "candidate pool {pool} is smaller than k {k} for {:?}",
                bundle.image_id
            )));
        }
    }
    let depth = k.max(5);
    let ranked = run_query(bundle, index, config, encoder, depth)?;
    let gt = &bundle.gt_caption_ids;
    let gt_rank = gt.iter().filter_map(|g| ranked.rank_of(g)).min();
    let ap = match index.kind() {
        CaptionKind::Sparse => {
            let gt_set: HashSet<&str> = gt.iter().map(String::as_str).collect();
            Some(average_precision(&ranked, &gt_set, k)?)
        }
        CaptionKind::Dense => None,
    };
    Ok(QueryResult {
        image_id: bundle.image_id.clone(),
        k,
        gt_rank,
        ap,
        hit_at_1: recall_at_k(&ranked, gt, 1) == 1,
        hit_at_5: recall_at_k(&ranked, gt, 5) == 1,
    })
}

fn validate_bundles(bundles: &[QueryBundle], index: &CaptionIndex, config: &EvalConfig) -> Result<()> {
    if bundles.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for b in bundles {
        if b.gt_caption_ids.is_empty() {
            return Err(Error::EmptyGroundTruth);
        }
        if let Some(id) = b.gt_caption_ids.iter().find(|id| index.position(id).is_none()) {
            return Err(Error::UnknownGroundTruthId {
                image_id: b.image_id.clone(),
                id: id.clone(),
            });
        }
        if config.rerank && b.sparse_pred_text.as_deref().is_none_or(|t| t.trim().is_empty()) {
            return Err(Error::ConfigConflict(format!(
                "re-ranking needs a sparse prediction for {:?}",
                b.image_id
            )));
        }
    }
    Ok(())
}

/// Runs the configured pipeline over every bundle and aggregates the metrics.
///
/// Bundles are evaluated in parallel on the current rayon pool; results are
/// collected in bundle order so the report does not depend on scheduling.
pub fn evaluate_corpus(
    corpus_name: &str,
    bundles: &[QueryBundle],
    index: &CaptionIndex,
    config: &EvalConfig,
    encoder: &dyn TextEncoder,
) -> Result<EvalReport> {
    config.check(index)?;
    validate_bundles(bundles, index, config)?;
    if !config.is_baseline() && encoder.fingerprint() != index.encoder_fingerprint() {
        log::warn!(
            "query encoder {} differs from index encoder {}",
            encoder.fingerprint(),
            index.encoder_fingerprint()
        );
    }

    let per_query = bundles
        .par_iter()
        .map(|b| evaluate_one(b, index, config, encoder))
        .collect::<Result<Vec<_>>>()?;

    let n = per_query.len() as f64;
    let recall_at_1 = per_query.iter().filter(|q| q.hit_at_1).count() as f64 / n;
    let recall_at_5 = per_query.iter().filter(|q| q.hit_at_5).count() as f64 / n;
    let mean_ap = match index.kind() {
        CaptionKind::Sparse => Some(per_query.iter().filter_map(|q| q.ap).sum::<f64>() / n),
        CaptionKind::Dense => None,
    };
    Ok(EvalReport {
        corpus_name: corpus_name.to_string(),
        config: ReportConfig {
            w_img: config.weights.w_img(),
            w_text: config.weights.w_text(),
            text_source: config.text_source,
            bidirectional: config.bidirectional,
            index_w_img: config.bidirectional.then(|| config.index_weights.w_img()),
            index_w_text: config.bidirectional.then(|| config.index_weights.w_text()),
            rerank: config.rerank,
            pool: config.pool,
            encoder_fingerprint: encoder.fingerprint(),
            index_fingerprint: index.encoder_fingerprint().to_string(),
        },
        num_queries: per_query.len(),
        recall_at_1,
        recall_at_5,
        mean_ap,
        per_query,
    })
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    RecallAt1,
    RecallAt5,
    MeanAp,
}

impl SweepMetric {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMetric::RecallAt1 => "recall_at_1",
            SweepMetric::RecallAt5 => "recall_at_5",
            SweepMetric::MeanAp => "mean_ap",
        }
    }

    fn pick(&self, report: &EvalReport) -> f64 {
        match self {
            SweepMetric::RecallAt1 => report.recall_at_1,
            SweepMetric::RecallAt5 => report.recall_at_5,
            SweepMetric::MeanAp => report.mean_ap.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub metric_name: String,
}

impl SweepResult {
    /// Grid point with the highest metric; the first one on ties.
    pub fn peak(&self) -> (f64, f64) {
        let mut best = (self.grid[0], self.values[0]);
        for (&g, &v) in self.grid.iter().zip(&self.values) {
            if v > best.1 {
                best = (g, v);
            }
        }
        best
    }

    pub fn value_at(&self, w_text: f64) -> Option<f64> {
        self.grid
            .iter()
            .position(|&g| (g - w_text).abs() < 1e-12)
            .map(|i| self.values[i])
    }

    /// Writes `w_text,metric` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["w_text", "metric"])?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `count` evenly spaced points from 0 to 1 inclusive, e.g. step 0.1 gives 11.
pub fn grid_from_step(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidGrid(format!("step {step} must lie in (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!("step {step} does not divide 1")));
    }
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Evaluates with weights `(1 - g, g)` for each grid point `g`.
pub fn sweep_fusion_weight(
    bundles: &[QueryBundle],
    index: &CaptionIndex,
    grid: &[f64],
    config: &EvalConfig,
    metric: SweepMetric,
    encoder: &dyn TextEncoder,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidGrid(format!("{g} is outside [0, 1]")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
    }
    let values = grid
        .iter()
        .map(|&g| {
            let cfg = EvalConfig {
                weights: FusionWeights::from_text_weight(g)?,
                ..*config
            };
            Ok(metric.pick(&evaluate_corpus("sweep", bundles, index, &cfg, encoder)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        grid: grid.to_vec(),
        values,
        metric_name: metric.name().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// JSON mirrors [`EvalReport`]; CSV has `image_id,k,gt_rank,ap,hit@1,hit@5`.
pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let io = |e| Error::io(path, e);
    match format {
        ReportFormat::Json => {
            let mut w = BufWriter::new(File::create(path).map_err(io)?);
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n").map_err(io)?;
            w.flush().map_err(io)
        }
        ReportFormat::Csv => {
            let file = File::create(path).map_err(io)?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["image_id", "k", "gt_rank", "ap", "hit@1", "hit@5"])?;
            for q in &report.per_query {
                w.write_record([
                    q.image_id.clone(),
                    q.k.to_string(),
                    q.gt_rank.map(|r| r.to_string()).unwrap_or_default(),
                    q.ap.map(|a| a.to_string()).unwrap_or_default(),
                    (q.hit_at_1 as u8).to_string(),
                    (q.hit_at_5 as u8).to_string(),
                ])?;
            }
            w.flush().map_err(io)
        }
    }
}
