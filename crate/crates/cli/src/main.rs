//! `lear`: train rankers and exit classifiers, run early-exit pipelines and
//! sweep efficiency/effectiveness trade-offs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or flag combinations. Exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable or invalid data and models. Exit code 3.
    #[error("{0:#}")]
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<lear_core::Error> for CliError {
    fn from(e: lear_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "lear", version, about = "Early-exit scoring of tree-ensemble rankers")]
pub struct Cli {
    /// TOML file with default values for command flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-query parallelism.
    #[arg(long, global = true, env = "LEAR_THREADS")]
    threads: Option<usize>,
    /// Directory that relative output paths are written to.
    #[arg(long, global = true, env = "LEAR_OUTPUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query and document counts of a LETOR file.
    Stats(StatsArgs),
    /// Write a synthetic LETOR dataset split into partitions.
    Synth(SynthArgs),
    /// Train a pointwise squared-loss ranker.
    TrainRanker(TrainRankerArgs),
    /// Train the learned exit classifier at a sentinel and report per-tau quality.
    TrainExit(TrainExitArgs),
    /// Precision/recall and feature importance of an exit classifier.
    EvalClassifier(EvalClassifierArgs),
    /// Run one strategy on a test set and report NDCG, speedup and cut statistics.
    Run(RunArgs),
    /// Evaluate a grid of strategies, sentinels and thresholds into a CSV file.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    num_features: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output prefix; partitions are written as `<prefix>.<name>.txt`.
    #[arg(long)]
    prefix: PathBuf,
    /// Use the 600-query benchmark shape instead of the defaults below.
    #[arg(long)]
    benchmark: bool,
    #[arg(long, default_value_t = 500)]
    queries: usize,
    #[arg(long, default_value_t = 20)]
    min_docs: usize,
    #[arg(long, default_value_t = 50)]
    max_docs: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Partition fractions, in order.
    #[arg(long, default_value = "0.6,0.2,0.05,0.15")]
    splits: String,
    /// Partition names matching `--splits`.
    #[arg(long, default_value = "train,valid,tune,test")]
    names: String,
}

#[derive(Debug, Args, Clone)]
struct ForestArgs {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_leaves: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    min_leaf: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainRankerArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Where to write the native JSON model.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    ndcg_k: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainExitArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    sentinel: Option<usize>,
    /// Top-k of the full ranking that relevant documents must reach to be Continue.
    #[arg(long)]
    k_label: Option<usize>,
    /// Where to write the classifier.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    forest: ForestArgs,
    /// Probability thresholds to report, `start:end:step` or a list.
    #[arg(long)]
    tau_grid: Option<String>,
    /// Minimum Exit recall when choosing tau.
    #[arg(long, default_value_t = 0.0)]
    exit_recall_floor: f64,
    /// Retrain using only the m features with the largest total gain.
    #[arg(long)]
    top_features: Option<usize>,
    /// JSON file for the tau report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Dump the training examples as `<prefix>.letor` and `<prefix>.weights`.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalClassifierArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sentinel: Option<usize>,
    #[arg(long)]
    k_label: Option<usize>,
    #[arg(long)]
    tau_grid: Option<String>,
}

#[derive(Debug, Args, Clone)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Classifier for LEAR: `PATH`, or `SENTINEL=PATH` (repeatable).
    #[arg(long)]
    classifier: Vec<String>,
    /// Rank threshold used by EPT.
    #[arg(long)]
    k_s: Option<usize>,
    #[arg(long)]
    ndcg_k: Option<usize>,
    /// `tree-count` (deterministic) or `wall-clock` (median of 5 runs).
    #[arg(long)]
    cost_mode: Option<String>,
    /// Order the final ranking by one merged score instead of two segments.
    #[arg(long)]
    merge_by_score: bool,
    /// Use the tree-major traversal backend.
    #[arg(long)]
    tree_major: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// full | ideal | ert | ept | lear
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    sentinel: Option<usize>,
    /// k_s for ert, p for ept, tau for lear, k for ideal.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated subset of ert, ept, lear, ideal.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    sentinels: Option<String>,
    #[arg(long)]
    ept_grid: Option<String>,
    #[arg(long)]
    lear_grid: Option<String>,
    #[arg(long)]
    ert_grid: Option<String>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Data(_) => ExitCode::from(3),
            }
        }
    }
}
