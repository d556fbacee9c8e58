//! `ssgl` command-line interface.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ssgl_core::SsglError;

/// Exit status for bad input or configuration.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for numerical failures.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ssgl", version, about = "Spike-and-slab group lasso fitting, selection and inference")]
struct Cli {
    /// Worker threads for CV folds, nodewise regressions and replicates.
    #[arg(long, global = true, env = "SSGL_THREADS")]
    #[serde(skip)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Fit the spike-rate ladder on a grouped design.
    Fit(FitArgs),
    /// Cross-validate the spike rate on a grouped design and refit.
    Cv(CvCmdArgs),
    /// Sparse additive model with one spline group per covariate.
    Gam(GamArgs),
    /// Additive model plus pairwise spline interaction groups.
    Interact(InteractArgs),
    /// De-biased estimates and confidence intervals.
    Debias(DebiasArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Headed numeric CSV.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Debug, Args, Serialize)]
struct GroupArgs {
    /// JSON group map: `{"column": "group"}` or `{"groups": [{"id", "columns"}], "unpenalized": [...]}`.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Without a map, consecutive blocks of this many columns form a group.
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    /// Groups left unpenalized, comma separated.
    #[arg(long, value_delimiter = ',')]
    unpenalized: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum FloorArg {
    /// The prior-mode starting value.
    Prior,
    /// 1e-12.
    Absolute,
}

#[derive(Debug, Args, Serialize)]
struct SolverArgs {
    /// Spike-rate ladder: `start:end[:step]` or a comma-separated list.
    #[arg(long, default_value = "1:100")]
    lambda0: String,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    /// Beta prior on the mixing weight.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Defaults to the number of penalized groups.
    #[arg(long)]
    b: Option<f64>,
    /// Convergence tolerance; defaults to 1e-6 sqrt(p).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Group updates between refreshes of theta, sigma^2 and thresholds.
    #[arg(long, default_value_t = 10)]
    update_stride: usize,
    #[arg(long, value_enum, default_value_t = FloorArg::Prior)]
    sigma2_floor: FloorArg,
}

#[derive(Debug, Args, Serialize)]
struct CvArgs {
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest spike rate within one standard error of the minimum.
    #[arg(long)]
    one_se: bool,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    groups: GroupArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Rung of the ladder to report; defaults to the last.
    #[arg(long)]
    at: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CvCmdArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    groups: GroupArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum KindArg {
    Natural,
    Bspline,
}

#[derive(Debug, Args, Serialize)]
struct GamArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    cv: CvArgs,
    /// Candidate degrees of freedom per covariate.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    df: Vec<usize>,
    #[arg(long, value_enum, default_value_t = KindArg::Natural)]
    basis: KindArg,
    /// Points per covariate in the effect-curve table.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct InteractArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    cv: CvArgs,
    /// Main-effect degrees of freedom.
    #[arg(long, default_value_t = 2)]
    main_df: usize,
    /// Per-covariate df inside each tensor product.
    #[arg(long, default_value_t = 2)]
    d_star: usize,
    /// Add both main bases to each interaction group.
    #[arg(long)]
    hierarchy: bool,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DebiasArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    groups: GroupArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    cv: CvArgs,
    /// Use this rung of the ladder instead of cross-validation.
    #[arg(long)]
    at: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Nodewise lasso penalty `c sqrt(log p / n)`.
    #[arg(long, default_value_t = 1.0)]
    nodewise_c: f64,
    /// Fixed nodewise penalty, overriding `--nodewise-c`.
    #[arg(long)]
    nodewise_lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// `model.json` written by another command.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TuningArg {
    Cv,
    Final,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// sparse_gam, interaction, coverage, dense, sigma_check, many_groups or timing.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    n: Option<usize>,
    /// Covariates (additive scenarios) or groups.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Defaults per scenario.
    #[arg(long, value_enum)]
    tuning: Option<TuningArg>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    solver: SolverArgs,
    /// Group counts for the timing scenario.
    #[arg(long, value_delimiter = ',', default_value = "100,200,500,1000,2000")]
    timing_groups: Vec<usize>,
    /// Write the first replicate's training data to this CSV and stop.
    #[arg(long)]
    #[serde(skip)]
    dump_data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SsglError>() {
        Some(e) if !e.is_validation() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
