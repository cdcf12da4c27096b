//! Brute-force ground truth: spectra of `A + tα` by a full eigensolve per
//! time, plus closed forms for the circle action and 2×2 symmetric lines.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::MatrixModel;

/// Row `k` holds the sorted (non-increasing) eigenvalues of `A + times[k]·α`.
pub fn eigenflow(a: &CMatrix, alpha: &CMatrix, model: MatrixModel, times: &[f64]) -> Result<DMatrix<f64>> {
    model.validate(a)?;
    model.validate(alpha)?;
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::input(format!("non-finite sample time {t}")));
    }
    let n = model.n;
    let mut out = DMatrix::zeros(times.len(), n);
    for (k, &t) in times.iter().enumerate() {
        let m = a + alpha.map(|z| z * t);
        let ev = linalg::eigvals_sorted(&m, model.is_real());
        debug_assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        for (i, v) in ev.into_iter().enumerate() {
            out[(k, i)] = v;
        }
    }
    Ok(out)
}

/// Eigenvalues of `[[a1 + t v1, t v3], [t v3, a2 + t v2]]`, larger first.
pub fn closed_form_2x2(a1: f64, a2: f64, v1: f64, v2: f64, v3: f64, t: f64) -> (f64, f64) {
    let mean = a1 + a2 + t * (v1 + v2);
    let d = a1 - a2 + t * (v1 - v2);
    let root = (d * d + 4.0 * t * t * v3 * v3).sqrt();
    (0.5 * (mean + root), 0.5 * (mean - root))
}

/// Orbit-space position `|x + t v|` of a straight line under the rotation
/// action of the circle on the plane.
pub fn circle_orbit_curve(x: [f64; 2], v: [f64; 2], t: f64) -> f64 {
    (x[0] + t * v[0]).hypot(x[1] + t * v[1])
}

/// Sorted union of `samples` uniform intervals on `[0, t_end]` and extra
/// times (typically accepted integrator steps) inside that interval.
pub fn comparison_grid(t_end: f64, samples: usize, extra: &[f64]) -> Vec<f64> {
    let mut grid = crate::dynamics::uniform_times(t_end, samples);
    grid.extend(extra.iter().copied().filter(|t| (0.0..=t_end).contains(t)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Largest entry of `|x - y|` over rows and columns.
pub fn max_deviation(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    assert_eq!(x.shape(), y.shape());
    x.iter().zip(y.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}
