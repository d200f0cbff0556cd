use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Training-free image-text retrieval with caption fusion and item re-ranking.
#[derive(Debug, Parser)]
#[command(name = "f4its", version, about)]
struct Cli {
    /// Log verbosity (repeat for more). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a captions JSONL file into an F4I index.
    BuildIndex(BuildIndexArgs),
    /// Run one query against an index and print the ranked captions.
    Search(SearchArgs),
    /// Evaluate a bundle set and print R@1 / R@5 (/ mAP).
    Evaluate(EvaluateArgs),
    /// Evaluate across a grid of text weights and write a CSV.
    Sweep(SweepArgs),
    /// Write a seeded synthetic corpus with recorded baseline metrics.
    GenSynthetic(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncoderChoice {
    Synthetic,
    File,
    Remote,
}

#[derive(Debug, Args)]
struct EncoderArgs {
    /// Encoder backend. Search, evaluate and sweep default to the index's encoder.
    #[arg(long, value_enum)]
    encoder: Option<EncoderChoice>,
    /// Embedding dimension (synthetic and remote).
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic encoder seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Remote embedding service base URL.
    #[arg(long, env = "F4_ENCODER_ENDPOINT")]
    endpoint: Option<String>,
    /// Bearer token for the remote service.
    #[arg(long, env = "F4_ENCODER_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// F4E table of precomputed text embeddings, keyed by caption id or text.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    /// Captions JSONL: {"id", "text", "kind": "dense"|"sparse"} per line.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Dense,
    Sparse,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Text weight for query fusion; the image weight is 1 - w_text. 0 disables fusion.
    #[arg(long, default_value_t = 0.3)]
    w_text: f64,
    /// Which predicted text feeds query fusion.
    #[arg(long, value_enum, default_value_t = SourceArg::Dense)]
    text_source: SourceArg,
    /// Also fuse each index caption with the query image at scoring time.
    #[arg(long)]
    bidirectional: bool,
    /// Text weight for index-side fusion under --bidirectional.
    #[arg(long, default_value_t = 0.7)]
    index_w_text: f64,
    /// Re-rank candidates by max similarity to predicted items (sparse index only).
    #[arg(long)]
    rerank: bool,
    /// Candidate pool size for re-ranking [default: max(50, 5k)].
    #[arg(long)]
    pool: Option<usize>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query image: `file.f4e#id`, a single-record F4E file, or inline `x1,x2,...`.
    #[arg(long)]
    image_embedding: String,
    /// Predicted dense caption.
    #[arg(long)]
    dense_text: Option<String>,
    /// Predicted comma-separated item list.
    #[arg(long)]
    sparse_text: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvalInputArgs {
    #[arg(long)]
    index: PathBuf,
    /// Bundles JSONL (image id, predicted texts, ground truth).
    #[arg(long)]
    bundles: PathBuf,
    /// F4E file with the query image embeddings.
    #[arg(long)]
    images: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: EvalInputArgs,
    /// Name shown in the summary line [default: bundles file stem].
    #[arg(long)]
    name: Option<String>,
    /// Write the full report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    R1,
    R5,
    Map,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("grid_spec").required(true).args(["grid", "grid_step"])))]
struct SweepArgs {
    #[command(flatten)]
    input: EvalInputArgs,
    /// Comma-separated w_text values, e.g. "0,0.1,0.2".
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    /// Evenly spaced grid from 0 to 1.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Metric to sweep [default: r1 for dense indexes, map for sparse].
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Output CSV with columns w_text,metric.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("grid is empty".into());
    }
    Ok(Grid(values))
}

#[derive(Debug, Clone, Copy)]
struct ItemRange(usize, usize);

fn parse_range(s: &str) -> Result<ItemRange, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => Ok(ItemRange(parse(a)?, parse(b)?)),
        None => parse(s).map(|n| ItemRange(n, n)),
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 300)]
    vocab_size: usize,
    #[arg(long, default_value_t = 1000)]
    num_captions: usize,
    /// Items per dish as `min-max` or a single count.
    #[arg(long, value_parser = parse_range, default_value = "3-6")]
    items_per_caption: ItemRange,
    /// Standard deviation of the Gaussian noise added to image embeddings.
    #[arg(long, default_value_t = 0.24)]
    noise_sigma: f64,
    /// Probability that an item is missing from the predicted texts.
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    /// Unrelated items blended into each image embedding.
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long, default_value_t = 1.0)]
    distractor_weight: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Use the item re-ranking fixture parameters (only --seed and --out-dir apply).
    #[arg(long)]
    rerank_fixture: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::BuildIndex(a) => commands::build_index(a),
        Command::Search(a) => commands::search(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
