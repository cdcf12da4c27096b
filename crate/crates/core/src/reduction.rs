//! Cotangent-lift symplectic data for the matrix models.
//!
//! A point `(A, α)` of `T*V` has momentum `Y = [A, α]`, constant along the
//! line `A + tα`. Conjugating `A` to `diag(a_1 >= ... >= a_n)` gives
//! `Y_ij = α_ij (a_i - a_j)`, so the reduced state is `(a, diag(α), Y)` up to
//! the residual torus, which is fixed lexicographically here.

use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::MatrixModel;
use crate::orbit_metric::{blocks_of, multiplicity_partition};

/// Entries of `Y` at or below this magnitude (relative to `1 + max|Y|`) are
/// treated as zero when fixing the torus gauge.
pub const GAUGE_ZERO_TOL: f64 = 1e-12;

/// Largest admissible `|Y_ij|` on a pair with `a_i = a_j`.
pub const DEGENERATE_SPIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint {
    pub a: CMatrix,
    pub alpha: CMatrix,
}

impl CotangentPoint {
    pub fn new(a: CMatrix, alpha: CMatrix, model: MatrixModel) -> Result<Self> {
        model.validate(&a)?;
        model.validate(&alpha)?;
        Ok(CotangentPoint { a, alpha })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The point `(A + tα, α)` on the straight line through `self`.
    pub fn flow(&self, t: f64) -> CotangentPoint {
        CotangentPoint { a: &self.a + self.alpha.map(|z| z * t), alpha: self.alpha.clone() }
    }

    pub fn conjugated(&self, g: &CMatrix) -> CotangentPoint {
        CotangentPoint { a: linalg::conjugate(g, &self.a), alpha: linalg::conjugate(g, &self.alpha) }
    }
}

/// Reduced coordinates `(a, p, Y)`: chamber position, diagonal momenta and
/// spin matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub y: CMatrix,
}

impl ReducedState {
    pub fn new(a: Vec<f64>, p: Vec<f64>, y: CMatrix, model: MatrixModel) -> Result<Self> {
        let s = ReducedState { a, p, y };
        s.validate(model)?;
        Ok(s)
    }

    /// Free state with vanishing spin.
    pub fn free(a: Vec<f64>, p: Vec<f64>) -> Self {
        let n = a.len();
        ReducedState { a, p, y: CMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self, model: MatrixModel) -> Result<()> {
        let n = model.n;
        check_dim(n, self.a.len())?;
        check_dim(n, self.p.len())?;
        check_dim(n, self.y.nrows())?;
        check_dim(n, self.y.ncols())?;
        if self.a.iter().chain(&self.p).any(|v| !v.is_finite())
            || self.y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::input("reduced state has non-finite entries"));
        }
        if let Some(k) = self.a.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::invariant(format!("chamber position not sorted at index {k}")));
        }
        let scale = 1.0 + linalg::max_abs(&self.y);
        if linalg::skew_hermitian_defect(&self.y) > 1e-10 * scale {
            return Err(Error::invariant("spin matrix is not skew-Hermitian"));
        }
        if model.is_real() && linalg::max_imag(&self.y) > 1e-10 * scale {
            return Err(Error::invariant("symmetric model requires a real spin matrix"));
        }
        for i in 0..n {
            if self.y[(i, i)].norm() > 1e-12 * scale {
                return Err(Error::invariant(format!("spin matrix has nonzero diagonal entry Y_{i}{i}")));
            }
            for j in 0..n {
                if i != j && self.a[i] == self.a[j] && self.y[(i, j)].norm() > DEGENERATE_SPIN_TOL {
                    return Err(Error::invariant(format!(
                        "nonzero spin Y_{i}{j} on the degenerate pair a_{i} = a_{j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Remaining gauge freedom after normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualGauge {
    /// Index classes whose relative phases (signs, for the symmetric model)
    /// are fixed. More than one class means a torus factor stays free.
    pub phase_classes: Vec<Vec<usize>>,
    /// Degenerate eigenvalue blocks in which the diagonalized momentum still
    /// has repeated entries, so a non-abelian stabilizer remains.
    pub unresolved_blocks: Vec<Vec<usize>>,
}

impl ResidualGauge {
    pub fn is_trivial(&self) -> bool {
        self.phase_classes.len() <= 1 && self.unresolved_blocks.is_empty()
    }
}

/// The group element realizing the normalization: `A = g diag(a) g*`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFrame {
    pub g: CMatrix,
    pub residual: ResidualGauge,
}

/// `J(A, α) = [A, α] = Aα - αA`.
pub fn momentum_map(x: &CotangentPoint) -> CMatrix {
    linalg::commutator(&x.a, &x.alpha)
}

/// `h(A, α) = ½ Tr(α²)`.
pub fn hamiltonian_ambient(x: &CotangentPoint) -> f64 {
    0.5 * (&x.alpha * &x.alpha).trace().re
}

/// Moves `(A, α)` into chamber coordinates and fixes the residual gauge.
///
/// Eigenvalues of `A` closer than `tol` are merged into a degenerate block
/// (snapped to their mean); inside each block the momentum sub-block is
/// diagonalized with non-increasing entries. The torus is then used to make
/// the first nonzero `Y_ij` (`i > j`, lexicographic) linking two phase
/// classes positive: positive imaginary for the Hermitian model, positive
/// real for the symmetric model.
pub fn reduce(x: &CotangentPoint, model: MatrixModel, tol: f64) -> Result<(ReducedState, GaugeFrame)> {
    model.validate(&x.a)?;
    model.validate(&x.alpha)?;
    if !(tol >= 0.0) {
        return Err(Error::input("degeneracy tolerance must be non-negative"));
    }
    let n = model.n;
    let real = model.is_real();

    let (mut a, mut g) = linalg::eigh_sorted(&x.a, real);
    let partition = multiplicity_partition(&a, tol);
    let mut alpha = g.adjoint() * &x.alpha * &g;
    let mut unresolved_blocks = Vec::new();

    for block in blocks_of(&partition) {
        if block.len() < 2 {
            continue;
        }
        let mean = a[block.clone()].iter().sum::<f64>() / block.len() as f64;
        for v in &mut a[block.clone()] {
            *v = mean;
        }
        let sub = alpha.view((block.start, block.start), (block.len(), block.len())).clone_owned();
        let (mu, h) = linalg::eigh_sorted(&sub, real);
        let cols = g.columns(block.start, block.len()) * &h;
        g.columns_mut(block.start, block.len()).copy_from(&cols);
        if multiplicity_partition(&mu, tol).len() < mu.len() {
            unresolved_blocks.push(block.clone().collect());
        }
    }
    if !unresolved_blocks.is_empty() || partition.len() < n {
        alpha = g.adjoint() * &x.alpha * &g;
    }

    let mut y = spin_from_alpha(&a, &alpha);
    let phase_classes = fix_torus_gauge(&mut y, &mut g, real);
    if !real {
        // Move g into SU(n); conjugation does not see a central phase.
        let det = g.determinant();
        if det.norm() > 0.0 {
            let ph = Complex64::from_polar(1.0, -det.arg() / n as f64);
            g.iter_mut().for_each(|z| *z *= ph);
        }
    } else if n % 2 == 1 && g.determinant().re < 0.0 {
        g.iter_mut().for_each(|z| *z = -*z);
    }

    let p = (0..n).map(|i| alpha[(i, i)].re).collect();
    Ok((ReducedState { a, p, y }, GaugeFrame { g, residual: ResidualGauge { phase_classes, unresolved_blocks } }))
}

/// `Y_ij = α_ij (a_i - a_j)`, exactly zero on the diagonal and on
/// degenerate pairs.
fn spin_from_alpha(a: &[f64], alpha: &CMatrix) -> CMatrix {
    let n = a.len();
    CMatrix::from_fn(n, n, |i, j| if a[i] == a[j] { Complex64::default() } else { alpha[(i, j)] * (a[i] - a[j]) })
}

/// Applies `D = diag(e^{iθ})` (signs in the real case) so that the spanning
/// entries of `Y` are normalized; updates `g -> g D*`. Returns the classes
/// of indices whose relative phases were fixed.
fn fix_torus_gauge(y: &mut CMatrix, g: &mut CMatrix, real: bool) -> Vec<Vec<usize>> {
    let n = y.nrows();
    let thr = GAUGE_ZERO_TOL * (1.0 + linalg::max_abs(y));
    let mut class: Vec<usize> = (0..n).collect();
    let mut phase = vec![Complex64::new(1.0, 0.0); n];

    for i in 1..n {
        for j in 0..i {
            let yij = y[(i, j)] * phase[i] * phase[j].conj();
            if yij.norm() <= thr || class[i] == class[j] {
                continue;
            }
            let rot = if real {
                if yij.re < 0.0 { Complex64::new(-1.0, 0.0) } else { Complex64::new(1.0, 0.0) }
            } else {
                // make e^{iφ} Y_ij = i |Y_ij|
                linalg::I * yij.conj() / yij.norm()
            };
            let (from, to) = (class[i], class[j]);
            for k in 0..n {
                if class[k] == from {
                    phase[k] *= rot;
                    class[k] = to;
                }
            }
        }
    }

    for i in 0..n {
        for j in 0..n {
            y[(i, j)] *= phase[i] * phase[j].conj();
        }
    }
    for j in 0..n {
        let ph = phase[j].conj();
        g.column_mut(j).iter_mut().for_each(|z| *z *= ph);
    }

    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    for k in 0..n {
        match seen.iter().position(|&c| c == class[k]) {
            Some(pos) => classes[pos].push(k),
            None => {
                seen.push(class[k]);
                classes.push(vec![k]);
            }
        }
    }
    classes
}

/// Rebuilds the diagonal representative `(diag(a), α)` of a reduced state.
pub fn reconstruct(s: &ReducedState, model: MatrixModel) -> Result<CotangentPoint> {
    s.validate(model)?;
    let n = model.n;
    let alpha = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(s.p[i], 0.0)
        } else if s.a[i] == s.a[j] {
            Complex64::default()
        } else {
            s.y[(i, j)] / (s.a[i] - s.a[j])
        }
    });
    Ok(CotangentPoint { a: linalg::diag_real(&s.a), alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, diag_real};

    #[test]
    fn momentum_map_hand_example() {
        let a = diag_real(&[1.0, 0.0]);
        let alpha = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let x = CotangentPoint::new(a, alpha, MatrixModel::symmetric(2)).unwrap();
        let y = momentum_map(&x);
        let want = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(y, want);
        assert_eq!(hamiltonian_ambient(&x), 1.0);
        for t in [0.0, 0.5, 1.0] {
            assert!(linalg::max_abs(&(momentum_map(&x.flow(t)) - &want)) < 1e-12);
        }
    }

    #[test]
    fn commuting_pair_reduces_to_zero_spin() {
        let model = MatrixModel::hermitian(2);
        let x = CotangentPoint::new(diag_real(&[2.0, 1.0]), diag_real(&[0.3, -0.7]), model).unwrap();
        assert_eq!(linalg::max_abs(&momentum_map(&x)), 0.0);
        let (s, frame) = reduce(&x, model, 1e-8).unwrap();
        assert_eq!(s.a, vec![2.0, 1.0]);
        assert!((s.p[0] - 0.3).abs() < 1e-15 && (s.p[1] + 0.7).abs() < 1e-15);
        assert_eq!(linalg::max_abs(&s.y), 0.0);
        assert_eq!(frame.residual.phase_classes.len(), 2);
    }

    #[test]
    fn zero_momentum_has_zero_energy() {
        let model = MatrixModel::symmetric(3);
        let x = CotangentPoint::new(diag_real(&[1.0, 2.0, 3.0]), CMatrix::zeros(3, 3), model).unwrap();
        assert_eq!(hamiltonian_ambient(&x), 0.0);
    }

    #[test]
    fn reconstruct_free_state_is_diagonal() {
        let model = MatrixModel::hermitian(3);
        let s = ReducedState::free(vec![3.0, 1.0, 0.0], vec![1.0, 2.0, 3.0]);
        let x = reconstruct(&s, model).unwrap();
        assert_eq!(x.alpha, diag_real(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn reconstruct_rejects_spin_on_degenerate_pair() {
        let model = MatrixModel::symmetric(2);
        let y = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)]);
        let s = ReducedState { a: vec![1.0, 1.0], p: vec![0.0, 0.0], y };
        assert!(matches!(reconstruct(&s, model), Err(Error::Invariant(_))));
    }

    #[test]
    fn degenerate_block_is_diagonalized() {
        let model = MatrixModel::symmetric(3);
        let a = diag_real(&[1.0, 1.0, -1.0]);
        let alpha = CMatrix::from_row_slice(
            3,
            3,
            &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)],
        );
        let x = CotangentPoint::new(a, alpha, model).unwrap();
        let (s, _) = reduce(&x, model, 1e-8).unwrap();
        assert_eq!(s.a[0], s.a[1]);
        assert!((s.p[0] - 1.0).abs() < 1e-14 && (s.p[1] + 1.0).abs() < 1e-14);
        assert_eq!(s.y[(0, 1)], Complex64::default());
        s.validate(model).unwrap();
    }
}
