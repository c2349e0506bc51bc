mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

/// Non-negative lasso and NNLS solving, support-recovery condition checks
/// and synthetic benchmarks.
#[derive(Debug, Parser)]
#[command(name = "nnsparse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dictionary, observation and ground truth.
    Gen(GenArgs),
    /// Solve for every observation column.
    Solve(SolveArgs),
    /// Evaluate recovery conditions for a candidate support.
    Check(CheckArgs),
    /// Run a batch and tabulate condition verdicts against recovery.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of bands (rows).
    #[arg(long = "L", default_value_t = 50)]
    l: usize,
    /// Number of atoms (columns).
    #[arg(long = "N", default_value_t = 12)]
    n: usize,
    /// Support size.
    #[arg(long = "J", default_value_t = 3)]
    j: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest absolute cosine allowed between two atoms.
    #[arg(long, default_value_t = 0.9)]
    coherence: f64,
    #[arg(long, default_value_t = 0.2)]
    coef_min: f64,
    #[arg(long, default_value_t = 1.0)]
    coef_max: f64,
    /// none | gaussian:sigma=S | directional:[j=J,]beta=B,sign=± | bilinear:weight=W
    #[arg(long, default_value = "none")]
    distortion: String,
    /// Fixed support, comma separated 0-based indices.
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<usize>>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "instance")]
    prefix: String,
    /// Write a header row with atom names to the dictionary CSV.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    /// ADMM with support polishing (NNLS path at γ = 0).
    Nlasso,
    /// Active-set NNLS; requires γ = 0.
    Nnls,
    /// Active-set method for any γ.
    ActiveSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scaling {
    Absolute,
    /// Multiply γ by max_j a_jᵀy of each observation.
    MaxCorrelation,
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Dictionary CSV, one row per band, one column per atom.
    #[arg(long)]
    dictionary: PathBuf,
    /// Observation CSV, one row per band, one column per observation.
    #[arg(long)]
    observations: PathBuf,
    /// The dictionary CSV starts with a row of atom names.
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = Scaling::Absolute)]
    gamma_scaling: Scaling,
    /// TOML file with solver settings.
    #[arg(long)]
    solver_config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output JSON path; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = SolverKind::Nlasso)]
    solver: SolverKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum ConditionName {
    All,
    Apmrc,
    PercMax,
    PercAmax,
    ErcMrc,
    Base,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Candidate support, comma separated 0-based indices.
    #[arg(long, value_delimiter = ',', required = true)]
    support: Vec<usize>,
    /// Ground-truth JSON; needed for the ERC-based condition.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    conditions: Vec<ConditionName>,
    /// Strict inequalities hold when the margin exceeds this.
    #[arg(long, default_value_t = 0.0)]
    strict_tol: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TOML batch description; excludes the batch flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    /// Support sizes, cycled over instances.
    #[arg(long = "J", value_delimiter = ',')]
    j: Option<Vec<usize>>,
    #[arg(long)]
    coherence: Option<f64>,
    #[arg(long)]
    coef_min: Option<f64>,
    #[arg(long)]
    coef_max: Option<f64>,
    /// Repeat to cycle several distortions over the instances.
    #[arg(long)]
    distortion: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    gamma_scaling: Option<Scaling>,
    /// Cross-check each solution against exhaustive enumeration.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("NNSPARSE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "NNSPARSE_THREADS must be a positive integer, got '{}'",
                value
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Check(a) => commands::check(&a),
        Command::Eval(a) => commands::eval(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nnsparse: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
