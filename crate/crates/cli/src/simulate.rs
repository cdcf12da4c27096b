use anyhow::{bail, Context};
use log::{debug, info};
use orbitflow::dynamics::uniform_times;
use orbitflow::io::{read_matrix, PolarRunMetadata, PolarTrajectoryFile, RunMetadata, TrajectoryFile};
use orbitflow::polar::{integrate_polar_with, random_polar_state, PolarOptions};
use orbitflow::reduction::reduce;
use orbitflow::sampling::{random_regular_pair, DEFAULT_MIN_GAP};
use orbitflow::{integrate_with, CotangentPoint, IntegrateOptions, MatrixModel, RestrictedRootSystem, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::output::emit;
use crate::{Format, ModelChoice, NumericFailure, RunSettings};

/// Tolerance for grouping eigenvalues into blocks when reducing.
pub const REDUCE_TOL: f64 = 1e-8;

/// Initial `(A, α)`: explicit matrix files, or a seeded random regular pair.
pub fn initial_pair(s: &RunSettings) -> anyhow::Result<(MatrixModel, CotangentPoint, Option<u64>)> {
    match (&s.a, &s.alpha) {
        (Some(pa), Some(palpha)) => {
            let (ma, a) = read_matrix(pa).with_context(|| format!("reading {}", pa.display()))?;
            let (mv, alpha) = read_matrix(palpha).with_context(|| format!("reading {}", palpha.display()))?;
            if ma != mv {
                bail!("--a is {} n={} but --alpha is {} n={}", ma.kind, ma.n, mv.kind, mv.n);
            }
            if let Some(kind) = s.model.and_then(ModelChoice::kind) {
                if kind != ma.kind {
                    bail!("--model {kind} does not match the {} matrix files", ma.kind);
                }
            }
            Ok((ma, CotangentPoint::new(a, alpha, ma)?, None))
        }
        _ => {
            let model = s.matrix_model()?;
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            Ok((model, random_regular_pair(model, DEFAULT_MIN_GAP, &mut rng), Some(s.seed)))
        }
    }
}

pub fn options(s: &RunSettings, sample_times: Vec<f64>) -> IntegrateOptions {
    IntegrateOptions {
        rtol: s.tol,
        atol: s.tol * 1e-2,
        gap_floor: s.gap_floor,
        sample_times: Some(sample_times),
        convention: s.convention,
        ..IntegrateOptions::default()
    }
}

fn metadata(s: &RunSettings, model: MatrixModel, seed: Option<u64>, traj: &Trajectory, status: String) -> RunMetadata {
    let opts = options(s, Vec::new());
    RunMetadata {
        model: model.kind,
        n: model.n,
        seed,
        t_end: s.t_end,
        rtol: opts.rtol,
        atol: opts.atol,
        gap_floor: opts.gap_floor,
        sign_convention: s.convention,
        sign_convention_formula: s.convention.describe().to_string(),
        accepted_steps: traj.stats.accepted,
        rejected_steps: traj.stats.rejected,
        status,
    }
}

fn write(s: &RunSettings, file: &TrajectoryFile) -> anyhow::Result<()> {
    let text = match s.format {
        Format::Csv => file.to_csv(),
        Format::Json => file.to_json(),
    };
    emit(s.out.as_deref(), &text)
}

pub fn run(s: &RunSettings) -> anyhow::Result<()> {
    if s.model == Some(ModelChoice::PolarFile) {
        return run_polar(s);
    }
    let (model, x, seed) = initial_pair(s)?;
    let (s0, frame) = reduce(&x, model, REDUCE_TOL)?;
    if !frame.residual.is_trivial() {
        info!("residual gauge freedom in degenerate blocks: {:?}", frame.residual);
    }
    info!("simulating {} n={} to t={} (rtol {})", model.kind, model.n, s.t_end, s.tol);
    match integrate_with(&s0, model, s.t_end, &options(s, uniform_times(s.t_end, s.samples)))? {
        Ok(traj) => {
            info!("{} accepted / {} rejected steps, {} events", traj.stats.accepted, traj.stats.rejected, traj.events.len());
            for e in &traj.events {
                debug!("event at t={}: {:?}", e.t, e.kind);
            }
            let meta = metadata(s, model, seed, &traj, "ok".to_string());
            write(s, &TrajectoryFile::new(meta, &traj))
        }
        Err(err) => {
            let meta = metadata(s, model, seed, &err.partial, format!("failed: {err}"));
            write(s, &TrajectoryFile::new(meta, &err.partial))?;
            Err(NumericFailure(format!("{err}; partial trajectory written")).into())
        }
    }
}

fn run_polar(s: &RunSettings) -> anyhow::Result<()> {
    let path = s.root_file.as_ref().expect("checked when resolving settings");
    let rs = RestrictedRootSystem::load(path).with_context(|| format!("loading root data {}", path.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let s0 = random_polar_state(&rs, 0.5, &mut rng)?;
    let opts = PolarOptions {
        rtol: s.tol,
        atol: s.tol * 1e-2,
        gap_floor: s.gap_floor,
        samples: s.samples,
        convention: s.convention,
    };
    info!("simulating root data {} (section dim {}) to t={}", path.display(), rs.section_dim(), s.t_end);
    let traj = integrate_polar_with(&s0, &rs, s.t_end, &opts)?;
    let meta = PolarRunMetadata {
        root_file: path.display().to_string(),
        section_dim: rs.section_dim(),
        seed: Some(s.seed),
        t_end: s.t_end,
        rtol: opts.rtol,
        atol: opts.atol,
        gap_floor: opts.gap_floor,
        sign_convention: s.convention,
        sign_convention_formula: s.convention.describe().to_string(),
        accepted_steps: traj.stats.accepted,
        rejected_steps: traj.stats.rejected,
        status: "ok".to_string(),
    };
    let file = PolarTrajectoryFile::new(meta, &traj, &rs);
    let text = match s.format {
        Format::Csv => file.to_csv(),
        Format::Json => file.to_json(),
    };
    emit(s.out.as_deref(), &text)
}
