//! Small dense complex linear algebra shared by the matrix models.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn from_real(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| c(x, 0.0))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    let n = values.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { c(values[i], 0.0) } else { Complex64::default() })
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `max |m_ij - conj(m_ji)|`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut d = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    d
}

/// `max |m_ij + conj(m_ji)|`.
pub fn skew_hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut d = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            d = d.max((m[(i, j)] + m[(j, i)].conj()).norm());
        }
    }
    d
}

pub fn max_imag(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.im.abs()))
}

/// Eigen-decomposition `m = V diag(λ) V*` of a Hermitian matrix with the
/// eigenvalues sorted non-increasing (stable for ties).
///
/// Each eigenvector is normalized so that its largest-magnitude component
/// is positive real. With `real = true` the real part of `m` is decomposed
/// with a real symmetric solver and `V` is orthogonal.
pub fn eigh_sorted(m: &CMatrix, real: bool) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let (values, vectors) = if real {
        let re = m.map(|z| z.re);
        let re = (&re + re.transpose()) * 0.5;
        let eig = SymmetricEigen::new(re);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), from_real(&eig.eigenvectors))
    } else {
        let h = (m + m.adjoint()).map(|z| z * 0.5);
        let eig = SymmetricEigen::new(h);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let sorted: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let mut v = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let src = vectors.column(k);
        let mut best = 0;
        for r in 1..n {
            if src[r].norm() > src[best].norm() {
                best = r;
            }
        }
        let pivot = src[best];
        let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { c(1.0, 0.0) };
        for r in 0..n {
            v[(r, col)] = src[r] * phase;
        }
    }
    (sorted, v)
}

/// Eigenvalues only, sorted non-increasing.
pub fn eigvals_sorted(m: &CMatrix, real: bool) -> Vec<f64> {
    let mut values: Vec<f64> = if real {
        let re = m.map(|z| z.re);
        let re = (&re + re.transpose()) * 0.5;
        re.symmetric_eigenvalues().iter().copied().collect()
    } else {
        let h = (m + m.adjoint()).map(|z| z * 0.5);
        SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
    };
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Haar-distributed unitary matrix (QR of a complex Ginibre matrix with
/// the phases of `R`'s diagonal divided out).
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let z = CMatrix::from_fn(n, n, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Haar-distributed rotation in `SO(n)`.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Conjugation `g m g*`.
pub fn conjugate(g: &CMatrix, m: &CMatrix) -> CMatrix {
    g * m * g.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unitary(5, &mut rng);
        let e = &u * u.adjoint() - CMatrix::identity(5, 5);
        assert!(max_abs(&e) < 1e-13);
    }

    #[test]
    fn rotation_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..6 {
            let q = random_rotation(n, &mut rng);
            assert!((q.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigh_reconstructs_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unitary(4, &mut rng);
        let m = conjugate(&u, &diag_real(&[0.5, 2.0, -1.0, 0.25]));
        let (vals, v) = eigh_sorted(&m, false);
        assert_eq!(vals.len(), 4);
        for w in [2.0, 0.5, 0.25, -1.0].iter().zip(&vals) {
            assert!((w.0 - w.1).abs() < 1e-12);
        }
        let back = conjugate(&v, &diag_real(&vals));
        assert!(max_abs(&(back - &m)) < 1e-12);
        for j in 0..4 {
            let col = v.column(j);
            let big = col.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
            assert!(big.im.abs() < 1e-14 && big.re > 0.0);
        }
    }

    #[test]
    fn commutator_of_diagonals_vanishes() {
        let a = diag_real(&[1.0, 2.0]);
        let b = diag_real(&[3.0, -1.0]);
        assert_eq!(max_abs(&commutator(&a, &b)), 0.0);
    }
}
