use std::path::Path;

use anyhow::{bail, Context};
use orbitflow::io::read_matrix;
use orbitflow::orbit_metric::{chamber_map, distance};
use orbitflow::ModelKind;

use crate::output::format_significant;

/// Tolerance for grouping eigenvalues into multiplicity blocks.
const CHAMBER_TOL: f64 = 1e-8;

pub fn run(file_a: &Path, file_b: &Path, expected: Option<ModelKind>) -> anyhow::Result<()> {
    let (ma, a) = read_matrix(file_a).with_context(|| format!("reading {}", file_a.display()))?;
    let (mb, b) = read_matrix(file_b).with_context(|| format!("reading {}", file_b.display()))?;
    if ma != mb {
        bail!("{} is {} n={} but {} is {} n={}", file_a.display(), ma.kind, ma.n, file_b.display(), mb.kind, mb.n);
    }
    if let Some(kind) = expected {
        if kind != ma.kind {
            bail!("--model {kind} does not match the {} matrix files", ma.kind);
        }
    }
    let d = distance(&chamber_map(&a, ma, CHAMBER_TOL)?, &chamber_map(&b, mb, CHAMBER_TOL)?)?;
    println!("{}", format_significant(d, 12));
    Ok(())
}
