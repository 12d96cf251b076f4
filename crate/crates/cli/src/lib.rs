//! `ventus` command-line front end.

mod commands;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ventus_core::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

pub const TIDE_FILE: &str = "tide.vtm";
pub const GRID_FILE: &str = "grid.vtm";
pub const BIAS_FILE: &str = "bias.vtm";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "ventus",
    version,
    about = "Hybrid short/medium-term wind forecasting toolkit"
)]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Validate generation and grid files and write canonical copies.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic scenario.
    Synth(SynthArgs),
    /// EEMD of one CSV column.
    Decompose(DecomposeArgs),
    /// Fixed-effects marginal-response regression.
    AnalyzeMarginal(AnalyzeArgs),
    /// Train one short-term ensemble per station.
    TrainTide(TrainTideArgs),
    /// Short-term forecast for one station.
    PredictTide(PredictTideArgs),
    /// Rollout-train the grid forecaster.
    TrainGrid(TrainGridArgs),
    /// Fine-tune a grid model with a location-weighted loss.
    FinetuneGrid(FinetuneGridArgs),
    /// Fit linear bias correction from hindcasts.
    BiasCorrect(BiasCorrectArgs),
    /// Stitch short- and medium-term forecasts at the stations.
    PredictHybrid(PredictHybridArgs),
    /// Per-lead skill against the baseline.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::Decompose(_) => "decompose",
            Command::AnalyzeMarginal(_) => "analyze-marginal",
            Command::TrainTide(_) => "train-tide",
            Command::PredictTide(_) => "predict-tide",
            Command::TrainGrid(_) => "train-grid",
            Command::FinetuneGrid(_) => "finetune-grid",
            Command::BiasCorrect(_) => "bias-correct",
            Command::PredictHybrid(_) => "predict-hybrid",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub generation: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24 * 60)]
    pub hours: usize,
    /// TOML overrides for the scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub series: PathBuf,
    /// Column to decompose; defaults to the last one.
    #[arg(long)]
    pub column: Option<String>,
    /// Keep only rows where `key=value`.
    #[arg(long = "where")]
    pub filter: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_imfs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Directory holding generation.csv, or the CSV itself.
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub per_plant: bool,
    /// TOML regression settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainTideArgs {
    /// Directory holding stations.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictTideArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub location: Option<String>,
    /// Hour index of the last observation; defaults to the latest feasible.
    #[arg(long)]
    pub issue: Option<usize>,
    #[arg(long, default_value_t = 48)]
    pub horizon: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub loss: Option<PathBuf>,
    /// TOML model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneGridArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `lat_min,lat_max,lon_min,lon_max`
    #[arg(long = "box", allow_hyphen_values = true)]
    pub bounding_box: String,
    #[arg(long, default_value_t = 4.0)]
    pub omega: f64,
    #[arg(long)]
    pub loss: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BiasCorrectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = ventus_core::gridcaster::DEFAULT_BIAS_LEADS)]
    pub leads: usize,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictHybridArgs {
    #[arg(long)]
    pub short: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub bias: PathBuf,
    #[arg(long)]
    pub locations: PathBuf,
    /// Directory holding stations.csv and grid.gt1.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Closed lead window `start:end` in hours; repeatable.
    #[arg(long = "window", default_value = "14:38")]
    pub windows: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_INTERNAL
    }
}

fn init_logging() {
    let level = std::env::var("VENTUS_LOG").unwrap_or_else(|_| "warn".into());
    let level = match level.to_ascii_lowercase().as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_VALIDATION,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::io("thread pool", std::io::Error::other(e.to_string())))?;
    pool.install(|| commands::dispatch(cli))
}

/// `path` itself, or `path/name` when `path` is a directory.
pub(crate) fn artifact(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}
