mod commands;
mod error;
mod manifest;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rjm", version, about = "Regularized joint mixture models: fit, predict, simulate and evaluate")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a data CSV with header `y,x1..xp`.
    Fit(FitArgs),
    /// Allocate new feature rows to groups and predict their response.
    Predict(PredictArgs),
    /// Generate a simulated data set with its ground truth.
    Simulate(SimulateArgs),
    /// Sweep a simulation scenario over a mean-shift grid and replicates.
    Experiment(ExperimentArgs),
    /// Choose the number of groups by held-out group-wise prediction error.
    SelectK(SelectKArgs),
}

/// Estimation settings shared by every command that fits models.
#[derive(Debug, Clone, Args)]
pub struct FitOpts {
    /// Random-penalty prior scale.
    #[arg(long, default_value_t = 0.25)]
    pub c: f64,
    /// Graphical-lasso penalty: `universal` or a number.
    #[arg(long, default_value = "universal")]
    pub psi: String,
    /// Number of EM starts.
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    #[arg(long, default_value_t = 20)]
    pub max_iter: usize,
    /// Relative-change stopping tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// nj, flasso or rlasso.
    #[arg(long, default_value = "nj")]
    pub scheme: String,
    #[command(flatten)]
    pub fit: FitOpts,
    /// Model JSON; labels, trace and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV; a leading `y` column is ignored.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Data-generating settings shared by `simulate` and `experiment`.
#[derive(Debug, Clone, Args)]
pub struct ScenarioOpts {
    /// appendixA, toy51 or semisynth.
    #[arg(long)]
    pub scenario: String,
    /// A, B or C.
    #[arg(long, default_value = "A")]
    pub case: String,
    /// Correlated feature design (toy51).
    #[arg(long)]
    pub correlated: bool,
    #[arg(long)]
    pub p: Option<usize>,
    /// Target signal-to-noise ratio (semisynth).
    #[arg(long)]
    pub snr: Option<f64>,
    /// Fraction of active coefficients (semisynth).
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Comma-separated group sizes, e.g. `125,125`.
    #[arg(long)]
    pub n_per_group: Option<String>,
    /// Directory with `cov_1.csv .. cov_K.csv` base covariances (semisynth).
    #[arg(long)]
    pub cov_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioOpts,
    /// Mean-shift magnitude; the scenario default when omitted.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub scenario: ScenarioOpts,
    /// `start:end:step` or a comma list.
    #[arg(long, default_value = "0.1:1:0.05")]
    pub d_grid: String,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Comma-separated RJM schemes; empty for none.
    #[arg(long, default_value = "nj")]
    pub schemes: String,
    /// Comma-separated baselines (kmeans, gmm); empty for none.
    #[arg(long, default_value = "")]
    pub baselines: String,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectKArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "2,3,4")]
    pub k_candidates: String,
    /// Training fraction.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value = "nj")]
    pub scheme: String,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Some(n) = rjm::par::init_threads_from_env() {
        log::info!("using {n} worker threads");
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::SelectK(a) => commands::select_k(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e))
        }
    }
}
