use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use log::info;
use orbitflow::polar::{billiard_geodesic, builtin_root_system, fold_into_chamber, BilliardPath};
use orbitflow::{MatrixModel, RestrictedRootSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::emit;
use crate::{Format, ModelChoice};

#[derive(Debug, Clone)]
pub struct Settings {
    pub model: ModelChoice,
    pub n: Option<usize>,
    pub seed: u64,
    pub root_file: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub t_end: f64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn root_system(s: &Settings) -> anyhow::Result<RestrictedRootSystem> {
    if let Some(path) = &s.root_file {
        return RestrictedRootSystem::load(path).with_context(|| format!("loading root data {}", path.display()));
    }
    let kind = s.model.kind().ok_or_else(|| anyhow!("--model polar-file requires --root-file"))?;
    let n = match (s.n, &s.x0, &s.v0) {
        (Some(n), _, _) => n,
        (None, Some(x), _) | (None, None, Some(x)) => x.len(),
        (None, None, None) => return Err(anyhow!("--n, --x0 or --v0 is required")),
    };
    Ok(builtin_root_system(MatrixModel::new(kind, n)?))
}

fn to_csv(path: &BilliardPath, k: usize) -> String {
    let mut out = String::new();
    let cols = |p: &'static str| (1..=k).map(move |i| format!("{p}_{i}"));
    let mut header = vec!["record".to_string(), "t".into(), "root".into(), "corner".into()];
    header.extend(cols("x"));
    header.extend(cols("v_in"));
    header.extend(cols("v_out"));
    out.push_str(&header.join(","));
    out.push('\n');
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let blank = vec![""; k].join(",");
    for (idx, (t, x)) in path.vertices.iter().enumerate() {
        let v_out = path.velocities.get(idx).map_or_else(|| blank.clone(), |v| join(v));
        let _ = writeln!(out, "vertex,{t},,,{},{blank},{v_out}", join(x));
    }
    for e in &path.events {
        let _ = writeln!(out, "event,{},{},{},{},{},{}", e.t, e.root + 1, e.corner, join(&e.position), join(&e.v_in), join(&e.v_out));
    }
    out
}

pub fn run(s: &Settings) -> anyhow::Result<()> {
    let rs = root_system(s)?;
    let k = rs.section_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let x0 = match &s.x0 {
        Some(x) => x.clone(),
        None => {
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            fold_into_chamber(&rs, &x).ok_or_else(|| anyhow!("root data does not fold into a chamber"))?
        }
    };
    let v0 = match &s.v0 {
        Some(v) => v.clone(),
        None => (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let path = billiard_geodesic(&rs, &x0, &v0, s.t_end)?;
    info!("billiard: {} vertices, {} reflections", path.vertices.len(), path.events.len());
    let text = match s.format {
        Format::Json => serde_json::to_string_pretty(&path)? + "\n",
        Format::Csv => to_csv(&path, k),
    };
    emit(s.out.as_deref(), &text)
}
