//! `orbitflow`: simulate reduced orbit-space dynamics, compare them with the
//! eigenvalue oracle, trace chamber billiards and compute orbit distances.
//!
//! Exit codes: 0 success, 1 numerical failure (threshold exceeded or
//! integration error), 2 usage or parse error.

mod billiard;
mod compare;
mod config;
mod distance;
mod output;
mod simulate;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};
use orbitflow::dynamics::DEFAULT_GAP_FLOOR;
use orbitflow::{MatrixModel, ModelKind, SignConvention};

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "orbitflow", version, about = "Orbit-space geodesics and spin Calogero-Moser flows")]
struct Cli {
    /// TOML file with default values for the flags (keys as flag names,
    /// e.g. `t-end = 2.0`); flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the reduced flow and write the trajectory.
    Simulate(RunArgs),
    /// Integrate the reduced flow and compare it with eig(A + tα).
    CompareOracle(CompareArgs),
    /// Trace a straight line reflected at the Weyl-chamber walls.
    Billiard(BilliardArgs),
    /// Print the orbit-space distance between two matrices.
    Distance(DistanceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Hermitian,
    Symmetric,
    /// Reduced equations on user-supplied root data (`--root-file`).
    PolarFile,
}

impl ModelChoice {
    fn kind(self) -> Option<ModelKind> {
        match self {
            ModelChoice::Hermitian => Some(ModelKind::Hermitian),
            ModelChoice::Symmetric => Some(ModelKind::Symmetric),
            ModelChoice::PolarFile => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Matrix size (or ignored when --a/--alpha are given).
    #[arg(long)]
    n: Option<usize>,
    /// Seed for random initial data.
    #[arg(long)]
    seed: Option<u64>,
    /// Matrix file holding the initial point A.
    #[arg(long, value_name = "FILE", requires = "alpha")]
    a: Option<PathBuf>,
    /// Matrix file holding the initial velocity α.
    #[arg(long, value_name = "FILE", requires = "a")]
    alpha: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Relative tolerance of the integrator (absolute: tol/100).
    #[arg(long)]
    tol: Option<f64>,
    /// Number of uniform output intervals.
    #[arg(long)]
    samples: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Root-data TOML file (implies --model polar-file).
    #[arg(long, value_name = "FILE")]
    root_file: Option<PathBuf>,
    /// Smallest admissible gap between coupled coordinates.
    #[arg(long)]
    gap_floor: Option<f64>,
    /// Use the wrong sign in the spin equation (negative control).
    #[arg(long)]
    debug_flip_sign: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Largest admissible deviation from the oracle.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct BilliardArgs {
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root-data TOML file (default: builtin A_{n-1} roots).
    #[arg(long, value_name = "FILE")]
    root_file: Option<PathBuf>,
    /// Start point in section coordinates, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Initial velocity, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v0: Option<Vec<f64>>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct DistanceArgs {
    file_a: PathBuf,
    file_b: PathBuf,
    /// Expected model; must agree with the file headers.
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
}

/// Errors that exit with status 1 rather than 2.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NumericFailure>() || matches!(cause.downcast_ref(), Some(orbitflow::Error::Invariant(_))) {
            return 1;
        }
    }
    2
}

/// Resolved settings of a dynamics run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    /// `None`: taken from the matrix files, else Hermitian.
    pub model: Option<ModelChoice>,
    pub n: Option<usize>,
    pub seed: u64,
    pub a: Option<PathBuf>,
    pub alpha: Option<PathBuf>,
    pub t_end: f64,
    pub tol: f64,
    pub samples: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threshold: f64,
    pub root_file: Option<PathBuf>,
    pub gap_floor: f64,
    pub convention: SignConvention,
}

impl RunSettings {
    /// Matrix model from `--model`/`--n` when no explicit data is given.
    pub fn matrix_model(&self) -> anyhow::Result<MatrixModel> {
        let kind = self
            .model
            .unwrap_or(ModelChoice::Hermitian)
            .kind()
            .ok_or_else(|| anyhow!("--model polar-file has no matrix model"))?;
        let n = self.n.ok_or_else(|| anyhow!("--n is required for random initial data"))?;
        Ok(MatrixModel::new(kind, n)?)
    }
}

fn parse_enum<T: ValueEnum>(s: &str, what: &str) -> anyhow::Result<T> {
    T::from_str(s, true).map_err(|_| anyhow!("invalid {what} '{s}' in config"))
}

fn positive(name: &str, v: f64) -> anyhow::Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        bail!("--{name} must be positive and finite, got {v}")
    }
}

fn resolve_run(args: RunArgs, threshold: Option<f64>, cfg: &Config) -> anyhow::Result<RunSettings> {
    let root_file = args.root_file.or_else(|| cfg.root_file.clone());
    let model = match (args.model, cfg.model.as_deref()) {
        (Some(m), _) => Some(m),
        (None, Some(s)) => Some(parse_enum(s, "model")?),
        (None, None) if root_file.is_some() => Some(ModelChoice::PolarFile),
        (None, None) => None,
    };
    if model == Some(ModelChoice::PolarFile) && root_file.is_none() {
        bail!("--model polar-file requires --root-file");
    }
    let a = args.a.or_else(|| cfg.a.clone());
    let alpha = args.alpha.or_else(|| cfg.alpha.clone());
    if a.is_some() != alpha.is_some() {
        bail!("--a and --alpha must be given together");
    }
    let format = match (args.format, cfg.format.as_deref()) {
        (Some(f), _) => f,
        (None, Some(s)) => parse_enum(s, "format")?,
        (None, None) => Format::Csv,
    };
    let flip = args.debug_flip_sign || cfg.debug_flip_sign.unwrap_or(false);
    let samples = args.samples.or(cfg.samples).unwrap_or(200);
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    Ok(RunSettings {
        model,
        n: args.n.or(cfg.n),
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        a,
        alpha,
        t_end: positive("t-end", args.t_end.or(cfg.t_end).unwrap_or(1.0))?,
        tol: positive("tol", args.tol.or(cfg.tol).unwrap_or(1e-10))?,
        samples,
        out: args.out.or_else(|| cfg.out.clone()),
        format,
        threshold: positive("threshold", threshold.or(cfg.threshold).unwrap_or(1e-6))?,
        root_file,
        gap_floor: positive("gap-floor", args.gap_floor.or(cfg.gap_floor).unwrap_or(DEFAULT_GAP_FLOOR))?,
        convention: if flip { SignConvention::Flipped } else { SignConvention::Standard },
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Simulate(args) => simulate::run(&resolve_run(args, None, &cfg)?),
        Command::CompareOracle(args) => compare::run(&resolve_run(args.run, args.threshold, &cfg)?),
        Command::Billiard(args) => {
            let settings = billiard::Settings {
                model: match (args.model, cfg.model.as_deref()) {
                    (Some(m), _) => m,
                    (None, Some(s)) => parse_enum(s, "model")?,
                    (None, None) => ModelChoice::Hermitian,
                },
                n: args.n.or(cfg.n),
                seed: args.seed.or(cfg.seed).unwrap_or(0),
                root_file: args.root_file.or_else(|| cfg.root_file.clone()),
                x0: args.x0.or_else(|| cfg.x0.clone()),
                v0: args.v0.or_else(|| cfg.v0.clone()),
                t_end: args.t_end.or(cfg.t_end).unwrap_or(1.0),
                out: args.out.or_else(|| cfg.out.clone()),
                format: match (args.format, cfg.format.as_deref()) {
                    (Some(f), _) => f,
                    (None, Some(s)) => parse_enum(s, "format")?,
                    (None, None) => Format::Csv,
                },
            };
            billiard::run(&settings)
        }
        Command::Distance(args) => distance::run(&args.file_a, &args.file_b, args.model.and_then(ModelChoice::kind)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ORBITFLOW_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
