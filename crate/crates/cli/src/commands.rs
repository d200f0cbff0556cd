use std::path::Path;

use anyhow::{bail, Context, Result};

use f4its::dataset::load_bundles;
use f4its::encoder::{load_embedding_file, RemoteEncoder, SyntheticEncoder, TableEncoder};
use f4its::eval::{
    grid_from_step, run_query, with_workers, write_report, ReportFormat, SweepMetric,
};
use f4its::index::{ingest_captions, load_index, save_index};
use f4its::rerank::default_pool_size;
use f4its::synth::{generate, GenParams};
use f4its::{
    evaluate_corpus, sweep_fusion_weight, CaptionIndex, CaptionKind, EmbeddingVector,
    EncoderKind, EncoderSpec, EvalConfig, FusionWeights, QueryBundle, Stage, TextEncoder,
    TextSource,
};

use crate::{
    BuildIndexArgs, EncoderArgs, EncoderChoice, EvalInputArgs, EvaluateArgs, FormatArg, GenArgs,
    MetricArg, PipelineArgs, SearchArgs, SourceArg, SweepArgs,
};

const DEFAULT_DIM: usize = 64;

/// Merges command-line encoder flags over `base` (usually the index's recorded encoder).
fn open_encoder(args: &EncoderArgs, base: Option<EncoderSpec>) -> Result<Box<dyn TextEncoder>> {
    let kind = match (args.encoder, &base) {
        (Some(EncoderChoice::Synthetic), _) => EncoderKind::Synthetic,
        (Some(EncoderChoice::File), _) => EncoderKind::File,
        (Some(EncoderChoice::Remote), _) => EncoderKind::Remote,
        (None, Some(b)) => b.kind,
        (None, None) => EncoderKind::Synthetic,
    };
    let base = base.filter(|b| b.kind == kind);
    let dim = args
        .dim
        .or(base.as_ref().map(|b| b.dim))
        .unwrap_or(DEFAULT_DIM);
    let encoder: Box<dyn TextEncoder> = match kind {
        EncoderKind::Synthetic => {
            let seed = args.seed.or(base.map(|b| b.seed)).unwrap_or(0);
            let spec = EncoderSpec::synthetic(dim, seed);
            spec.validate()?;
            Box::new(SyntheticEncoder::new(dim, seed))
        }
        EncoderKind::Remote => {
            let endpoint = args
                .endpoint
                .clone()
                .or(base.and_then(|b| b.endpoint))
                .context("remote encoder needs --endpoint or F4_ENCODER_ENDPOINT")?;
            EncoderSpec::remote(endpoint.clone(), dim).validate()?;
            Box::new(RemoteEncoder::new(endpoint, dim)?.with_bearer_token(args.token.clone()))
        }
        EncoderKind::File => {
            let path = args
                .table
                .clone()
                .or(base.and_then(|b| b.path))
                .context("file encoder needs --table <embeddings.f4e>")?;
            let table = TableEncoder::from_file(&path)
                .with_context(|| format!("loading embedding table {}", path.display()))?;
            if let Some(d) = args.dim {
                if d != table.dim() {
                    bail!("--dim {d} disagrees with table dimension {}", table.dim());
                }
            }
            Box::new(table)
        }
    };
    Ok(encoder)
}

fn index_encoder(args: &EncoderArgs, index: &CaptionIndex) -> Result<Box<dyn TextEncoder>> {
    let recorded = EncoderSpec::from_fingerprint(index.encoder_fingerprint()).ok();
    if recorded.is_none() && args.encoder.is_none() {
        log::warn!(
            "index encoder {:?} is not recognised; falling back to a synthetic encoder",
            index.encoder_fingerprint()
        );
    }
    open_encoder(args, recorded)
}

fn eval_config(p: &PipelineArgs) -> Result<EvalConfig> {
    Ok(EvalConfig {
        weights: FusionWeights::from_text_weight(p.w_text)?,
        text_source: match p.text_source {
            SourceArg::Dense => TextSource::Dense,
            SourceArg::Sparse => TextSource::Sparse,
        },
        bidirectional: p.bidirectional,
        index_weights: FusionWeights::from_text_weight(p.index_w_text)?,
        rerank: p.rerank,
        pool: p.pool,
    })
}

fn load(path: &Path) -> Result<CaptionIndex> {
    load_index(path).with_context(|| format!("loading index {}", path.display()))
}

pub fn build_index(args: BuildIndexArgs) -> Result<()> {
    let captions = ingest_captions(&args.captions)
        .with_context(|| format!("reading captions {}", args.captions.display()))?;
    let encoder = open_encoder(&args.encoder, None)?;
    let index = f4its::index::build_index(captions, encoder.as_ref())?;
    save_index(&index, &args.out)?;
    println!(
        "indexed {} {} captions, dim {}, encoder {} -> {}",
        index.len(),
        index.kind(),
        index.dim(),
        index.encoder_fingerprint(),
        args.out.display()
    );
    Ok(())
}

/// `file.f4e#id`, a single-record F4E file, or inline comma-separated values.
fn parse_image_embedding(spec: &str) -> Result<EmbeddingVector> {
    let inline: Option<Vec<f32>> = spec
        .split(',')
        .map(|t| t.trim().parse::<f32>().ok())
        .collect();
    if let Some(values) = inline {
        return Ok(EmbeddingVector::new(values)?.l2_normalize()?);
    }
    let (path, id) = match spec.rsplit_once('#') {
        Some((p, id)) => (p, Some(id)),
        None => (spec, None),
    };
    let records = load_embedding_file(Path::new(path))
        .with_context(|| format!("loading image embeddings {path}"))?;
    match id {
        Some(id) => records
            .into_iter()
            .find(|(rid, _)| rid == id)
            .map(|(_, v)| v)
            .with_context(|| format!("no embedding with id {id:?} in {path}")),
        None if records.len() == 1 => Ok(records.into_iter().next().unwrap().1),
        None => bail!("{path} holds {} embeddings; select one with {path}#<id>", records.len()),
    }
}

pub fn search(args: SearchArgs) -> Result<()> {
    if args.k == 0 {
        bail!("--k must be positive");
    }
    let index = load(&args.index)?;
    let config = eval_config(&args.pipeline)?;
    config.check(&index)?;
    if let Some(pool) = config.pool.filter(|_| config.rerank) {
        if pool < args.k {
            bail!("--pool {pool} is smaller than --k {}", args.k);
        }
    }
    let encoder = index_encoder(&args.encoder, &index)?;

    let mut bundle = QueryBundle::new("query", parse_image_embedding(&args.image_embedding)?);
    bundle.dense_pred_text = args.dense_text;
    bundle.sparse_pred_text = args.sparse_text;
    let pool = config.pool.unwrap_or_else(|| default_pool_size(args.k));
    let config = EvalConfig {
        pool: Some(pool),
        ..config
    };
    let ranked = run_query(&bundle, &index, &config, encoder.as_ref(), args.k)?;

    let stage = match ranked.stage {
        Stage::Initial => "initial",
        Stage::Reranked => "reranked",
    };
    println!("stage={stage}");
    for (rank, e) in ranked.entries.iter().enumerate() {
        let row = index.position(&e.caption_id).expect("ranked ids come from the index");
        println!(
            "{}\t{}\t{:.6}\t{}",
            rank + 1,
            e.caption_id,
            e.score,
            index.caption(row).text
        );
    }
    Ok(())
}

struct Loaded {
    index: CaptionIndex,
    bundles: Vec<QueryBundle>,
    config: EvalConfig,
    encoder: Box<dyn TextEncoder>,
}

fn load_eval_inputs(args: &EvalInputArgs) -> Result<Loaded> {
    let index = load(&args.index)?;
    let bundles = load_bundles(&args.bundles, &args.images, index.kind()).with_context(|| {
        format!(
            "loading bundles {} with images {}",
            args.bundles.display(),
            args.images.display()
        )
    })?;
    let config = eval_config(&args.pipeline)?;
    let encoder = index_encoder(&args.encoder, &index)?;
    Ok(Loaded {
        index,
        bundles,
        config,
        encoder,
    })
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => with_workers(n, f),
        None => f(),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let l = load_eval_inputs(&args.input)?;
    let name = args.name.unwrap_or_else(|| {
        args.input
            .bundles
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    });
    let report = in_pool(args.input.workers, || {
        evaluate_corpus(&name, &l.bundles, &l.index, &l.config, l.encoder.as_ref())
    })?;
    if let Some(out) = &args.out {
        let format = match args.format {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        };
        write_report(&report, out, format)?;
    }
    println!("{}", report.summary_line());
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let grid = match (args.grid, args.grid_step) {
        (Some(g), _) => g.0,
        (None, Some(step)) => grid_from_step(step)?,
        (None, None) => unreachable!("clap requires one of --grid / --grid-step"),
    };
    let l = load_eval_inputs(&args.input)?;
    let metric = match args.metric {
        Some(MetricArg::R1) => SweepMetric::RecallAt1,
        Some(MetricArg::R5) => SweepMetric::RecallAt5,
        Some(MetricArg::Map) => SweepMetric::MeanAp,
        None => match l.index.kind() {
            CaptionKind::Dense => SweepMetric::RecallAt1,
            CaptionKind::Sparse => SweepMetric::MeanAp,
        },
    };
    if metric == SweepMetric::MeanAp && l.index.kind() == CaptionKind::Dense {
        bail!("mAP is only defined for sparse indexes");
    }
    let result = in_pool(args.input.workers, || {
        sweep_fusion_weight(&l.bundles, &l.index, &grid, &l.config, metric, l.encoder.as_ref())
    })?;
    result.write_csv(&args.out)?;
    let (w, v) = result.peak();
    println!("peak w_text={w} {}={v:.4}", result.metric_name);
    Ok(())
}

pub fn gen_synthetic(args: GenArgs) -> Result<()> {
    let params = if args.rerank_fixture {
        GenParams::rerank_fixture(args.seed)
    } else {
        GenParams {
            vocab_size: args.vocab_size,
            num_captions: args.num_captions,
            items_min: args.items_per_caption.0,
            items_max: args.items_per_caption.1,
            noise_sigma: args.noise_sigma,
            dropout: args.dropout,
            distractors: args.distractors,
            distractor_weight: args.distractor_weight,
            dim: args.dim,
            seed: args.seed,
        }
    };
    let corpus = generate(&params)?;
    corpus.write_to(&args.out_dir)?;
    let b = &corpus.manifest.baseline;
    println!(
        "wrote {} images, {} dense and {} sparse captions to {} | baseline R@1 {:.4} | R@5 {:.4} | sparse mAP {:.4}",
        corpus.manifest.num_images,
        corpus.manifest.num_dense_captions,
        corpus.manifest.num_sparse_captions,
        args.out_dir.display(),
        b.dense_recall_at_1,
        b.dense_recall_at_5,
        b.sparse_mean_ap
    );
    Ok(())
}
