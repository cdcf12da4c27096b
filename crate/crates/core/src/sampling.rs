//! Seeded random initial data for tests, benchmarks and the CLI.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, c, CMatrix};
use crate::model::MatrixModel;
use crate::reduction::{CotangentPoint, ReducedState};

pub const DEFAULT_MIN_GAP: f64 = 0.2;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Non-increasing spectrum with consecutive gaps in `[min_gap, min_gap + 0.8)`,
/// roughly centred at zero.
pub fn random_spectrum<R: Rng + ?Sized>(n: usize, min_gap: f64, rng: &mut R) -> Vec<f64> {
    let mut a = Vec::with_capacity(n);
    let mut x: f64 = rng.random_range(-0.5..0.5) + 0.5 * (n as f64 - 1.0) * (min_gap + 0.4);
    for _ in 0..n {
        a.push(x);
        x -= min_gap + rng.random_range(0.0..0.8);
    }
    a
}

/// Random group element: Haar unitary (Hermitian model) or rotation
/// (symmetric model).
pub fn random_group_element<R: Rng + ?Sized>(model: MatrixModel, rng: &mut R) -> CMatrix {
    if model.is_real() {
        linalg::from_real(&linalg::random_rotation(model.n, rng))
    } else {
        linalg::random_unitary(model.n, rng)
    }
}

/// Gaussian element of the model's matrix space (GUE/GOE-like).
pub fn random_matrix<R: Rng + ?Sized>(model: MatrixModel, rng: &mut R) -> CMatrix {
    let n = model.n;
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(normal(rng), 0.0);
        for j in i + 1..n {
            let z = if model.is_real() { c(normal(rng), 0.0) } else { c(normal(rng), normal(rng)) };
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// `(A, α)` with spectrum of `A` separated by at least `min_gap` in a random
/// frame, and `α` a random direction of unit Frobenius norm.
pub fn random_regular_pair<R: Rng + ?Sized>(model: MatrixModel, min_gap: f64, rng: &mut R) -> CotangentPoint {
    let spectrum = random_spectrum(model.n, min_gap, rng);
    let g = random_group_element(model, rng);
    let a = linalg::conjugate(&g, &linalg::diag_real(&spectrum));
    let mut alpha = random_matrix(model, rng);
    let norm = linalg::frobenius(&alpha);
    if norm > 0.0 {
        alpha /= Complex64::new(norm, 0.0);
    }
    CotangentPoint { a: symmetrize(a), alpha }
}

fn symmetrize(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()).map(|z| z * 0.5)
}

/// Random spin matrix: skew-Hermitian (real skew for the symmetric model)
/// with zero diagonal and entries of size `scale`.
pub fn random_spin<R: Rng + ?Sized>(model: MatrixModel, scale: f64, rng: &mut R) -> CMatrix {
    let n = model.n;
    let mut y = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let z = if model.is_real() { c(normal(rng), 0.0) } else { c(normal(rng), normal(rng)) } * scale;
            y[(i, j)] = z;
            y[(j, i)] = -z.conj();
        }
    }
    y
}

/// Regular reduced state with random momenta and spin.
pub fn random_reduced_state<R: Rng + ?Sized>(model: MatrixModel, rng: &mut R) -> ReducedState {
    let a = random_spectrum(model.n, DEFAULT_MIN_GAP, rng);
    let p = (0..model.n).map(|_| normal(rng)).collect();
    let y = random_spin(model, 0.5, rng);
    ReducedState { a, p, y }
}

/// Line `(A, α)` in a random frame whose momentum is the rank-one type
/// `i(c·I + w w*)` with `|w_i|² = -c`, `c < 0`; in the diagonal frame the
/// spin is `Y_ij = -c·i` up to torus phases.
pub fn rank_one_pair<R: Rng + ?Sized>(n: usize, c_neg: f64, rng: &mut R) -> (CotangentPoint, Vec<f64>) {
    assert!(c_neg < 0.0, "rank-one coupling must be negative");
    let model = MatrixModel::hermitian(n);
    let a = random_spectrum(n, DEFAULT_MIN_GAP, rng);
    let r = (-c_neg).sqrt();
    let w: Vec<Complex64> = (0..n).map(|_| Complex64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let mut alpha = CMatrix::zeros(n, n);
    for i in 0..n {
        alpha[(i, i)] = c(normal(rng), 0.0);
        for j in 0..n {
            if i != j {
                let yij = linalg::I * w[i] * w[j].conj();
                alpha[(i, j)] = yij / (a[i] - a[j]);
            }
        }
    }
    let g = random_group_element(model, rng);
    let x = CotangentPoint {
        a: symmetrize(linalg::conjugate(&g, &linalg::diag_real(&a))),
        alpha: symmetrize(linalg::conjugate(&g, &alpha)),
    };
    (x, a)
}

/// Diagonal `A` with `a_1 = a_2` above a regular tail, and `α`
/// block-diagonal: a diagonal 2×2 block (momenta `±p`, pointing into the
/// chamber) and a random coupled block on the remaining `n - 2`
/// coordinates. The spin vanishes on the first two rows.
pub fn degenerate_wall_pair<R: Rng + ?Sized>(model: MatrixModel, rng: &mut R) -> CotangentPoint {
    let n = model.n;
    assert!(n >= 3, "need a coupled complement");
    let tail = random_spectrum(n - 2, DEFAULT_MIN_GAP, rng);
    let wall = tail[0] + 1.0 + rng.random_range(0.0..0.5);
    let mut a = vec![wall, wall];
    a.extend(&tail);
    let mut alpha = CMatrix::zeros(n, n);
    let p1: f64 = rng.random_range(0.05..0.3);
    alpha[(0, 0)] = c(p1, 0.0);
    alpha[(1, 1)] = c(-p1, 0.0);
    let sub = random_matrix(MatrixModel { kind: model.kind, n: n - 2 }, rng);
    for i in 2..n {
        for j in 2..n {
            alpha[(i, j)] = sub[(i - 2, j - 2)] * 0.3;
        }
    }
    CotangentPoint { a: linalg::diag_real(&a), alpha }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regular_pairs_are_regular_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=6 {
            for model in [MatrixModel::hermitian(n), MatrixModel::symmetric(n)] {
                let x = random_regular_pair(model, 0.2, &mut rng);
                model.validate(&x.a).unwrap();
                model.validate(&x.alpha).unwrap();
                assert!((linalg::frobenius(&x.alpha) - 1.0).abs() < 1e-12);
                let ev = linalg::eigvals_sorted(&x.a, model.is_real());
                assert!(ev.windows(2).all(|w| w[0] - w[1] >= 0.2 - 1e-9));
            }
        }
    }

    #[test]
    fn random_states_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for model in [MatrixModel::hermitian(4), MatrixModel::symmetric(4)] {
            random_reduced_state(model, &mut rng).validate(model).unwrap();
        }
    }
}
