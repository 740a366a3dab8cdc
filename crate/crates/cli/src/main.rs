//! `treetune`: build, tune, query and benchmark random-tree forests for
//! approximate nearest-neighbor search.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Exit status 2: the invocation itself is wrong.
const EXIT_USAGE: u8 = 2;
/// Exit status 1: the invocation was valid but the work failed.
const EXIT_RUNTIME: u8 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<treetune::Error> for CliError {
    fn from(e: treetune::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(version, about, long_about = None)]
struct Cli {
    /// TOML run file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for forest builds, ground truth and batch work.
    #[arg(long, global = true, env = "TREETUNE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the bundled synthetic corpus and query set.
    Fixture(FixtureArgs),
    /// Hold out validation and test queries from a corpus.
    Split(SplitArgs),
    /// Compute exact k-nearest neighbors of each query.
    Groundtruth(GroundtruthArgs),
    /// Grow a forest with fixed parameters.
    Build(BuildArgs),
    /// Grow one oversized forest, estimate every configuration, and keep the
    /// best one for a recall or time target.
    Autotune(AutotuneArgs),
    /// Answer queries with a saved index.
    Query(QueryArgs),
    /// Measure recall and query time over a grid of configurations.
    Bench(BenchArgs),
    /// Describe a saved index.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct FixtureArgs {
    /// Corpus output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Query set output path.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Vector file format (fvecs, raw, csv); inferred from the extension.
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation rows to hold out.
    #[arg(long)]
    pub validation: Option<usize>,
    /// Test rows to hold out.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving corpus, validation and test files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct GroundtruthArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv (one row of indices per query) or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// rkd, rp or pca.
    #[arg(long)]
    pub tree: Option<String>,
    /// Number of trees.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Tree depth; defaults to ⌊log₂ n⌋ − 5.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct AutotuneArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation queries, held out from the corpus.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub tree: Option<String>,
    /// recall=0.9, time=0.5ms, time=20us or time=0.001 (seconds).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Trees in the oversized forest.
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long)]
    pub lmin: Option<usize>,
    #[arg(long)]
    pub lmax: Option<usize>,
    /// Largest vote threshold considered; defaults to the tree count.
    #[arg(long)]
    pub vmax: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index output path (the selected sub-forest).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tuning report (JSON) output path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-configuration estimates (CSV) output path.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Time model to reuse instead of calibrating: a model JSON file or an
    /// earlier tuning report.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// The corpus the index was built on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Vote threshold for voting search.
    #[arg(long)]
    pub votes: Option<usize>,
    /// Extra leaves for priority-queue search; selects that strategy.
    #[arg(long)]
    pub branches: Option<usize>,
    /// Tuning report whose selected vote threshold to use.
    #[arg(long)]
    pub tuning: Option<PathBuf>,
    /// Ground truth (CSV); enables recall reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Timed passes over the batch; the median is reported.
    #[arg(long)]
    pub passes: Option<usize>,
    /// Neighbor output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Ground truth for the test queries; computed when omitted.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// For example `tree=rp,rkd;trees=1,4,16;depth=8;votes=1,2;branches=0,10`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub passes: Option<usize>,
    /// Adds an autotuned row per tree type for this target.
    #[arg(long)]
    pub target: Option<String>,
    /// Validation queries for the autotuned rows.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub tmax: Option<usize>,
    #[arg(long)]
    pub lmin: Option<usize>,
    #[arg(long)]
    pub lmax: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Corpus to check against the index's checksum.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// text (default), csv or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub vector_format: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let file = cli.config.as_deref();
    match cli.command {
        Command::Fixture(a) => commands::fixture(config::resolve(a, "fixture", file)?),
        Command::Split(a) => commands::split(config::resolve(a, "split", file)?),
        Command::Groundtruth(a) => commands::groundtruth(config::resolve(a, "groundtruth", file)?),
        Command::Build(a) => commands::build(config::resolve(a, "build", file)?),
        Command::Autotune(a) => commands::autotune(config::resolve(a, "autotune", file)?),
        Command::Query(a) => commands::query(config::resolve(a, "query", file)?),
        Command::Bench(a) => commands::bench(config::resolve(a, "bench", file)?),
        Command::Inspect(a) => commands::inspect(config::resolve(a, "inspect", file)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
