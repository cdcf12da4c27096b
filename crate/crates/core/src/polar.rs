//! Polar representations through explicit restricted-root data.
//!
//! A [`RestrictedRootSystem`] carries a section `Σ` with an orthonormal
//! basis `S_k`, positive roots `λ` (coefficient vectors on `Σ`) with
//! multiplicities, and the structure constants of an orthonormal basis
//!
//! ```text
//! H_k (centralizer 𝔥),  S_k (section),  E_λ^i, B_λ^i (root spaces)
//! ```
//!
//! with `[A, E_λ^i] = λ(A) B_λ^i` and `[A, B_λ^i] = λ(A) E_λ^i` for `A ∈ Σ`.
//! Each `±λ` pair is stored once, under the positive root. On this data the
//! reduced equations read
//!
//! ```text
//! Ȧ = p,   ṗ = Σ_λ ‖Y_λ‖² / λ(A)³ · λ,   Ẏ = -[Y, Z],   Z = Σ_λ Y_λ / λ(A)²
//! ```
//!
//! and straight lines in `Σ` reflected at the walls are the geodesics of
//! the orbit space.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::SignConvention;
use crate::error::{check_dim, Error, Result};
use crate::integrator::{self, DriverConfig, OdeSystem, Segment, Stats, Verdict};
use crate::linalg::{self, c, CMatrix};
use crate::model::MatrixModel;
use crate::reduction::ReducedState;

/// Pass threshold of [`verify_root_system`].
pub const VERIFY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub coefficients: Vec<f64>,
    pub multiplicity: usize,
}

impl Root {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coefficients.iter().map(|v| v * v).sum()
    }
}

/// Label of a basis element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasisLabel {
    H(usize),
    S(usize),
    E { root: usize, i: usize },
    B { root: usize, i: usize },
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisLabel::H(k) => write!(f, "H:{k}"),
            BasisLabel::S(k) => write!(f, "S:{k}"),
            BasisLabel::E { root, i } => write!(f, "E:{root}:{i}"),
            BasisLabel::B { root, i } => write!(f, "B:{root}:{i}"),
        }
    }
}

impl FromStr for BasisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |x: &str| x.parse::<usize>().map_err(|_| Error::input(format!("bad basis label '{s}'")));
        match parts.as_slice() {
            ["H", k] => Ok(BasisLabel::H(num(k)?)),
            ["S", k] => Ok(BasisLabel::S(num(k)?)),
            ["E", r, i] => Ok(BasisLabel::E { root: num(r)?, i: num(i)? }),
            ["B", r, i] => Ok(BasisLabel::B { root: num(r)?, i: num(i)? }),
            _ => Err(Error::input(format!("bad basis label '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedRootSystem {
    section_dim: usize,
    cartan_dim: usize,
    roots: Vec<Root>,
    labels: Vec<BasisLabel>,
    index: BTreeMap<BasisLabel, usize>,
    /// Dense structure constants: `[X_a, X_b] = Σ_c bracket[(a·D + b)·D + c] X_c`.
    bracket: Vec<f64>,
}

impl RestrictedRootSystem {
    /// Root data with all brackets zero; fill in with [`Self::set_bracket`].
    pub fn new(section_dim: usize, cartan_dim: usize, roots: Vec<Root>) -> Result<Self> {
        if section_dim == 0 {
            return Err(Error::input("section dimension must be positive"));
        }
        for (r, root) in roots.iter().enumerate() {
            check_dim(section_dim, root.coefficients.len())?;
            if root.multiplicity == 0 {
                return Err(Error::input(format!("root {r} has multiplicity 0")));
            }
            if !(root.norm_sqr() > 0.0) || root.coefficients.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("root {r} must be a finite nonzero functional")));
            }
        }
        let mut labels: Vec<BasisLabel> = (0..cartan_dim).map(BasisLabel::H).collect();
        labels.extend((0..section_dim).map(BasisLabel::S));
        for (r, root) in roots.iter().enumerate() {
            labels.extend((0..root.multiplicity).map(|i| BasisLabel::E { root: r, i }));
            labels.extend((0..root.multiplicity).map(|i| BasisLabel::B { root: r, i }));
        }
        let index = labels.iter().enumerate().map(|(k, l)| (*l, k)).collect();
        let d = labels.len();
        Ok(RestrictedRootSystem { section_dim, cartan_dim, roots, labels, index, bracket: vec![0.0; d * d * d] })
    }

    pub fn section_dim(&self) -> usize {
        self.section_dim
    }

    pub fn cartan_dim(&self) -> usize {
        self.cartan_dim
    }

    /// Positive roots; the negatives are implied.
    pub fn roots(&self) -> &[Root] {
        &self.roots
    }

    /// All roots `±λ`.
    pub fn all_roots(&self) -> Vec<Vec<f64>> {
        self.roots
            .iter()
            .flat_map(|r| [r.coefficients.clone(), r.coefficients.iter().map(|v| -v).collect()])
            .collect()
    }

    pub fn basis(&self) -> &[BasisLabel] {
        &self.labels
    }

    pub fn basis_dim(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, l: BasisLabel) -> Option<usize> {
        self.index.get(&l).copied()
    }

    fn idx(&self, l: BasisLabel) -> usize {
        self.index[&l]
    }

    pub fn set_bracket(&mut self, x: BasisLabel, y: BasisLabel, z: BasisLabel, value: f64) -> Result<()> {
        let d = self.basis_dim();
        let get = |l| self.label_index(l).ok_or_else(|| Error::input(format!("unknown basis label {l}")));
        let (a, b, c) = (get(x)?, get(y)?, get(z)?);
        self.bracket[(a * d + b) * d + c] = value;
        Ok(())
    }

    pub fn bracket_coefficient(&self, a: usize, b: usize, c: usize) -> f64 {
        let d = self.basis_dim();
        self.bracket[(a * d + b) * d + c]
    }

    /// Bracket of two elements given by coefficient vectors on the basis.
    pub fn bracket_vec(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.basis_dim();
        let mut out = vec![0.0; d];
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (b, &yb) in y.iter().enumerate() {
                if yb == 0.0 {
                    continue;
                }
                let row = &self.bracket[(a * d + b) * d..(a * d + b + 1) * d];
                let w = xa * yb;
                for (o, v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Whether `x` lies in the closed chamber `{λ(x) ≥ -tol}`.
    pub fn in_chamber(&self, x: &[f64], tol: f64) -> bool {
        self.roots.iter().all(|r| r.eval(x) >= -tol)
    }

    fn e_indices(&self, root: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.roots[root].multiplicity).map(move |i| self.idx(BasisLabel::E { root, i }))
    }

    fn h_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cartan_dim).map(|k| self.idx(BasisLabel::H(k)))
    }

    /// Total dimension of `Σ_λ k_λ`, the size of the spin coordinates.
    pub fn spin_dim(&self) -> usize {
        self.roots.iter().map(|r| r.multiplicity).sum()
    }
}

/// Builtin `A_{n-1}` data of a matrix model; the bracket is the matrix
/// commutator expanded in the basis
/// `E = (e_ij - e_ji)/√2, i(e_ij + e_ji)/√2`, `B = (e_ij + e_ji)/√2, i(e_ij - e_ji)/√2`,
/// `S_k = e_kk`, `H_k = i e_kk` (Hermitian model only), orthonormal for
/// `Re Tr(X Y*)`. Positive roots are `e_i - e_j`, `i < j`, in lexicographic
/// order.
pub fn builtin_root_system(model: MatrixModel) -> RestrictedRootSystem {
    let n = model.n;
    let mult = if model.is_real() { 1 } else { 2 };
    let pairs = root_pairs(n);
    let roots = pairs
        .iter()
        .map(|&(i, j)| {
            let mut coefficients = vec![0.0; n];
            coefficients[i] = 1.0;
            coefficients[j] = -1.0;
            Root { coefficients, multiplicity: mult }
        })
        .collect();
    let cartan = if model.is_real() { 0 } else { n };
    let mut rs = RestrictedRootSystem::new(n, cartan, roots).expect("builtin root data is valid");

    // Each basis element has at most two nonzero entries.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one = c(1.0, 0.0);
    let entries: Vec<Vec<(usize, usize, Complex64)>> = rs
        .labels
        .iter()
        .map(|l| match *l {
            BasisLabel::H(k) => vec![(k, k, linalg::I)],
            BasisLabel::S(k) => vec![(k, k, one)],
            BasisLabel::E { root, i } => {
                let (a, b) = pairs[root];
                if i == 0 {
                    vec![(a, b, one * s), (b, a, -one * s)]
                } else {
                    vec![(a, b, linalg::I * s), (b, a, linalg::I * s)]
                }
            }
            BasisLabel::B { root, i } => {
                let (a, b) = pairs[root];
                if i == 0 {
                    vec![(a, b, one * s), (b, a, one * s)]
                } else {
                    vec![(a, b, linalg::I * s), (b, a, -linalg::I * s)]
                }
            }
        })
        .collect();
    let d = entries.len();
    let mut m = CMatrix::zeros(n, n);
    for x in 0..d {
        for y in 0..d {
            m.fill(c(0.0, 0.0));
            let mut nonzero = false;
            for &(i, j, u) in &entries[x] {
                for &(k, l, w) in &entries[y] {
                    if j == k {
                        m[(i, l)] += u * w;
                        nonzero = true;
                    }
                    if l == i {
                        m[(k, j)] -= w * u;
                        nonzero = true;
                    }
                }
            }
            if !nonzero {
                continue;
            }
            for (z, basis) in entries.iter().enumerate() {
                let v: f64 = basis.iter().map(|&(i, j, w)| (m[(i, j)] * w.conj()).re).sum();
                if v.abs() > 1e-15 {
                    rs.bracket[(x * d + y) * d + z] = v;
                }
            }
        }
    }
    rs
}

/// Index pairs `(i, j)`, `i < j`, in the order of the builtin positive roots.
pub fn root_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarReducedState {
    pub a0: Vec<f64>,
    pub p0: Vec<f64>,
    /// `Y_λ` per positive root, length `k_λ`.
    pub y: Vec<Vec<f64>>,
}

impl PolarReducedState {
    pub fn validate(&self, rs: &RestrictedRootSystem) -> Result<()> {
        check_dim(rs.section_dim, self.a0.len())?;
        check_dim(rs.section_dim, self.p0.len())?;
        check_dim(rs.roots.len(), self.y.len())?;
        for (r, (root, yr)) in rs.roots.iter().zip(&self.y).enumerate() {
            check_dim(root.multiplicity, yr.len())?;
            let l = root.eval(&self.a0);
            if l < 0.0 {
                return Err(Error::input(format!("section point violates chamber wall of root {r}")));
            }
            if l == 0.0 && yr.iter().any(|v| v.abs() > crate::reduction::DEGENERATE_SPIN_TOL) {
                return Err(Error::invariant(format!("nonzero spin on the vanishing root {r}")));
            }
        }
        if self.a0.iter().chain(&self.p0).chain(self.y.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite polar state"));
        }
        Ok(())
    }

    /// Dictionary from the matrix model: `A0 = a`, `p0 = p`,
    /// `Y_λ = √2 (Re Y_ij, Im Y_ij)` (only the real part in the symmetric
    /// model) for `λ = e_i - e_j`.
    pub fn from_reduced(s: &ReducedState, model: MatrixModel) -> Result<Self> {
        s.validate(model)?;
        let r2 = std::f64::consts::SQRT_2;
        let y = root_pairs(model.n)
            .into_iter()
            .map(|(i, j)| {
                let z = s.y[(i, j)];
                if model.is_real() { vec![r2 * z.re] } else { vec![r2 * z.re, r2 * z.im] }
            })
            .collect();
        Ok(PolarReducedState { a0: s.a.clone(), p0: s.p.clone(), y })
    }

    /// Inverse of [`Self::from_reduced`].
    pub fn to_reduced(&self, model: MatrixModel) -> Result<ReducedState> {
        let n = model.n;
        let pairs = root_pairs(n);
        check_dim(n, self.a0.len())?;
        check_dim(pairs.len(), self.y.len())?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut y = CMatrix::zeros(n, n);
        for (&(i, j), yr) in pairs.iter().zip(&self.y) {
            let z = match yr.as_slice() {
                [re] if model.is_real() => c(re * s, 0.0),
                [re, im] if !model.is_real() => c(re * s, im * s),
                _ => return Err(Error::Dimension { expected: if model.is_real() { 1 } else { 2 }, got: yr.len() }),
            };
            y[(i, j)] = z;
            y[(j, i)] = -z.conj();
        }
        let out = ReducedState { a: self.a0.clone(), p: self.p0.clone(), y };
        out.validate(model)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarDerivative {
    pub da0: Vec<f64>,
    pub dp0: Vec<f64>,
    pub dy: Vec<Vec<f64>>,
}

impl PolarDerivative {
    pub fn max_abs_diff(&self, other: &PolarDerivative) -> f64 {
        let flat = |d: &PolarDerivative| -> Vec<f64> {
            d.da0.iter().chain(&d.dp0).chain(d.dy.iter().flatten()).copied().collect()
        };
        flat(self).iter().zip(flat(other)).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn spin_vector(rs: &RestrictedRootSystem, y: &[Vec<f64>]) -> Vec<f64> {
    let mut v = vec![0.0; rs.basis_dim()];
    for (r, yr) in y.iter().enumerate() {
        for (k, idx) in rs.e_indices(r).enumerate() {
            v[idx] = yr[k];
        }
    }
    v
}

fn polar_field(
    a0: &[f64],
    p0: &[f64],
    y: &[Vec<f64>],
    rs: &RestrictedRootSystem,
    active: &dyn Fn(usize, f64) -> bool,
    conv: SignConvention,
) -> PolarDerivative {
    let mut dp0 = vec![0.0; rs.section_dim];
    let mut z = vec![0.0; rs.basis_dim()];
    for (r, root) in rs.roots.iter().enumerate() {
        let l = root.eval(a0);
        if !active(r, l) {
            continue;
        }
        let norm2: f64 = y[r].iter().map(|v| v * v).sum();
        let f = norm2 / (l * l * l);
        for (d, coef) in dp0.iter_mut().zip(&root.coefficients) {
            *d += f * coef;
        }
        for (k, idx) in rs.e_indices(r).enumerate() {
            z[idx] = y[r][k] / (l * l);
        }
    }
    let yv = spin_vector(rs, y);
    let yz = rs.bracket_vec(&yv, &z);
    let sign = match conv {
        SignConvention::Standard => -1.0,
        SignConvention::Flipped => 1.0,
    };
    let dy = rs
        .roots
        .iter()
        .enumerate()
        .map(|(r, root)| {
            if root.eval(a0) == 0.0 {
                vec![0.0; root.multiplicity]
            } else {
                rs.e_indices(r).map(|idx| sign * yz[idx]).collect()
            }
        })
        .collect();
    PolarDerivative { da0: p0.to_vec(), dp0, dy }
}

/// The reduced field on the section. Roots vanishing at `A0` are excluded
/// from the forces and from `Z`.
pub fn polar_vector_field(s: &PolarReducedState, rs: &RestrictedRootSystem) -> PolarDerivative {
    polar_vector_field_with(s, rs, SignConvention::Standard)
}

pub fn polar_vector_field_with(s: &PolarReducedState, rs: &RestrictedRootSystem, conv: SignConvention) -> PolarDerivative {
    polar_field(&s.a0, &s.p0, &s.y, rs, &|_, l| l != 0.0, conv)
}

/// `½‖p‖² + ½ Σ_{λ(A) ≠ 0} ‖Y_λ‖² / λ(A)²`.
pub fn polar_hamiltonian(s: &PolarReducedState, rs: &RestrictedRootSystem) -> f64 {
    let mut h = 0.5 * s.p0.iter().map(|v| v * v).sum::<f64>();
    for (root, yr) in rs.roots.iter().zip(&s.y) {
        let l = root.eval(&s.a0);
        if l != 0.0 {
            h += 0.5 * yr.iter().map(|v| v * v).sum::<f64>() / (l * l);
        }
    }
    h
}

/// `Tr((-ad_Y²)^k)` on `𝔥 ⊕ span{E}`, `k = 1..=kmax`: invariants of the
/// isospectral spin flow.
pub fn polar_casimirs(s: &PolarReducedState, rs: &RestrictedRootSystem, kmax: usize) -> Vec<f64> {
    let yv = spin_vector(rs, &s.y);
    let idx: Vec<usize> = rs.h_indices().chain((0..rs.roots.len()).flat_map(|r| rs.e_indices(r))).collect();
    let m = idx.len();
    let d = rs.basis_dim();
    // ad_Y restricted to the compact part: column b is [Y, X_b].
    let mut ad = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (col, &b) in idx.iter().enumerate() {
        let mut e = vec![0.0; d];
        e[b] = 1.0;
        let w = rs.bracket_vec(&yv, &e);
        for (row, &a) in idx.iter().enumerate() {
            ad[(row, col)] = w[a];
        }
    }
    let q = &ad * ad.transpose();
    let mut power = q.clone();
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        if k > 1 {
            power = &power * &q;
        }
        out.push(power.trace());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarSample {
    pub t: f64,
    pub state: PolarReducedState,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarTrajectory {
    pub samples: Vec<PolarSample>,
    /// Roots vanishing at `t = 0`, excluded from the dynamics throughout.
    pub frozen_roots: Vec<usize>,
    pub stats: Stats,
}

impl PolarTrajectory {
    /// Largest `|Y_λ|` over samples and frozen roots.
    pub fn max_frozen_spin(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| self.frozen_roots.iter().flat_map(move |&r| s.state.y[r].iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct PolarFlow<'a> {
    rs: &'a RestrictedRootSystem,
    frozen: Vec<bool>,
    gap_floor: f64,
    conv: SignConvention,
}

impl PolarFlow<'_> {
    fn split<'b>(&self, y: &'b [f64]) -> (&'b [f64], &'b [f64], Vec<Vec<f64>>) {
        let k = self.rs.section_dim;
        let mut off = 2 * k;
        let spins = self
            .rs
            .roots
            .iter()
            .map(|r| {
                let v = y[off..off + r.multiplicity].to_vec();
                off += r.multiplicity;
                v
            })
            .collect();
        (&y[..k], &y[k..2 * k], spins)
    }
}

fn pack_polar(s: &PolarReducedState) -> Vec<f64> {
    s.a0.iter().chain(&s.p0).chain(s.y.iter().flatten()).copied().collect()
}

impl OdeSystem for PolarFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.rs.section_dim + self.rs.spin_dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (a0, p0, spins) = self.split(y);
        let frozen = &self.frozen;
        let d = polar_field(a0, p0, &spins, self.rs, &|r, l| l != 0.0 && !frozen[r], self.conv);
        for (o, v) in dy.iter_mut().zip(d.da0.iter().chain(&d.dp0).chain(d.dy.iter().flatten())) {
            *o = *v;
        }
    }

    fn inspect(&mut self, seg: &Segment<'_>) -> Verdict {
        let (a0, _, spins) = self.split(seg.y1);
        for (r, root) in self.rs.roots.iter().enumerate() {
            if !self.frozen[r] && spins[r].iter().any(|v| *v != 0.0) && root.eval(a0) < self.gap_floor {
                return Verdict::Reject;
            }
        }
        Verdict::Accept
    }
}

/// Options for [`integrate_polar_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolarOptions {
    pub rtol: f64,
    pub atol: f64,
    pub gap_floor: f64,
    /// Output at `samples + 1` uniform times.
    pub samples: usize,
    pub convention: SignConvention,
}

impl PolarOptions {
    pub fn with_tol(tol: f64, samples: usize) -> Self {
        PolarOptions {
            rtol: tol,
            atol: tol * 1e-2,
            gap_floor: crate::dynamics::DEFAULT_GAP_FLOOR,
            samples,
            convention: SignConvention::Standard,
        }
    }
}

/// Integrates the polar reduced equations; output at `samples + 1` uniform
/// times. Decoupled walls are not reflected here.
pub fn integrate_polar(
    s0: &PolarReducedState,
    rs: &RestrictedRootSystem,
    t_end: f64,
    tol: f64,
    samples: usize,
) -> Result<PolarTrajectory> {
    integrate_polar_with(s0, rs, t_end, &PolarOptions::with_tol(tol, samples))
}

pub fn integrate_polar_with(
    s0: &PolarReducedState,
    rs: &RestrictedRootSystem,
    t_end: f64,
    opts: &PolarOptions,
) -> Result<PolarTrajectory> {
    s0.validate(rs)?;
    if !(t_end > 0.0 && opts.rtol > 0.0 && opts.atol > 0.0 && opts.samples > 0) {
        return Err(Error::input("t_end, tolerances and sample count must be positive"));
    }
    let frozen: Vec<bool> = rs.roots.iter().map(|r| r.eval(&s0.a0) == 0.0).collect();
    let frozen_roots = (0..frozen.len()).filter(|&r| frozen[r]).collect();
    let mut start = s0.clone();
    for (r, f) in frozen.iter().enumerate() {
        if *f {
            start.y[r].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut flow = PolarFlow { rs, frozen, gap_floor: opts.gap_floor, conv: opts.convention };
    let times = crate::dynamics::uniform_times(t_end, opts.samples);
    let y0 = pack_polar(&start);
    let mut out = vec![PolarSample { t: 0.0, energy: polar_hamiltonian(&start, rs), state: start.clone() }];
    let mut next = 1;
    let mut buf = vec![0.0; y0.len()];
    let unpack = |v: &[f64]| {
        let k = rs.section_dim;
        let mut off = 2 * k;
        let y = rs
            .roots
            .iter()
            .map(|r| {
                let s = v[off..off + r.multiplicity].to_vec();
                off += r.multiplicity;
                s
            })
            .collect();
        PolarReducedState { a0: v[..k].to_vec(), p0: v[k..2 * k].to_vec(), y }
    };
    let cfg = DriverConfig { rtol: opts.rtol, atol: opts.atol, ..DriverConfig::default() };
    let stats = integrator::integrate_adaptive(&mut flow, &y0, t_end, &cfg, &mut |seg| {
        while next < times.len() && times[next] <= seg.t1 {
            seg.interpolate(times[next], &mut buf);
            let state = unpack(&buf);
            out.push(PolarSample { t: times[next], energy: polar_hamiltonian(&state, rs), state });
            next += 1;
        }
    })
    .map_err(|(e, _)| Error::invariant(format!("polar integration failed: {e}")))?;
    Ok(PolarTrajectory { samples: out, frozen_roots, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilliardEvent {
    pub t: f64,
    /// Index of the positive root whose wall reflected the velocity.
    pub root: usize,
    pub position: Vec<f64>,
    pub v_in: Vec<f64>,
    pub v_out: Vec<f64>,
    /// Several walls were hit at once; consecutive events with the same `t`
    /// belong to one corner hit.
    pub corner: bool,
    /// All walls through `position`.
    pub walls: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilliardPath {
    /// `(t, x)` at `t = 0`, at each reflection time and at `t_end`.
    pub vertices: Vec<(f64, Vec<f64>)>,
    /// Velocity on each leg; `velocities[k]` applies after `vertices[k]`.
    pub velocities: Vec<Vec<f64>>,
    pub events: Vec<BilliardEvent>,
}

impl BilliardPath {
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let k = match self.vertices.iter().rposition(|(tv, _)| *tv <= t) {
            Some(k) => k.min(self.velocities.len().saturating_sub(1)),
            None => 0,
        };
        let (t0, x0) = &self.vertices[k];
        let v = &self.velocities[k];
        x0.iter().zip(v).map(|(x, v)| x + (t - t0) * v).collect()
    }

    pub fn length(&self) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| w[0].1.iter().zip(&w[1].1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .sum()
    }
}

/// Reflection `v - 2 (λ·v)/(λ·λ) λ`.
pub fn reflect(v: &[f64], root: &Root) -> Vec<f64> {
    let f = 2.0 * root.eval(v) / root.norm_sqr();
    v.iter().zip(&root.coefficients).map(|(x, l)| x - f * l).collect()
}

/// Reflects `x` in violated walls until it lies in the closed chamber.
/// Each reflection strictly decreases the distance to an interior point, so
/// this terminates for a finite reflection group; `None` if it does not
/// within a generous budget (data that is not a root system).
pub fn fold_into_chamber(rs: &RestrictedRootSystem, x: &[f64]) -> Option<Vec<f64>> {
    let mut x = x.to_vec();
    for _ in 0..MAX_CORNER_REFLECTIONS {
        let worst = rs.roots.iter().map(|r| (r, r.eval(&x))).filter(|(_, l)| *l < 0.0).min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((r, _)) => x = reflect(&x, r),
            None => return Some(x),
        }
    }
    None
}

/// Seeded random polar state: a Gaussian section point folded into the
/// chamber, Gaussian momenta and spin components of size `spin_scale`.
pub fn random_polar_state<R: Rng + ?Sized>(
    rs: &RestrictedRootSystem,
    spin_scale: f64,
    rng: &mut R,
) -> Result<PolarReducedState> {
    let k = rs.section_dim;
    let x: Vec<f64> = (0..k).map(|_| 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let a0 = fold_into_chamber(rs, &x).ok_or_else(|| Error::input("root data does not fold into a chamber"))?;
    let p0 = (0..k).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let y = rs
        .roots
        .iter()
        .map(|r| (0..r.multiplicity).map(|_| spin_scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect();
    Ok(PolarReducedState { a0, p0, y })
}

/// Angle between `v` and the wall `λ = 0`.
pub fn wall_angle(v: &[f64], root: &Root) -> f64 {
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (root.eval(v).abs() / (nv * root.norm_sqr().sqrt())).clamp(0.0, 1.0).asin()
}

const MAX_CORNER_REFLECTIONS: usize = 10_000;

/// Straight line from `x0` with velocity `v0`, reflected at the chamber
/// walls up to `t_end`. Wall times are exact linear solves; at a corner the
/// velocity is reflected in violated walls until it points into the closed
/// chamber.
pub fn billiard_geodesic(rs: &RestrictedRootSystem, x0: &[f64], v0: &[f64], t_end: f64) -> Result<BilliardPath> {
    check_dim(rs.section_dim, x0.len())?;
    check_dim(rs.section_dim, v0.len())?;
    if v0.iter().all(|v| *v == 0.0) {
        return Err(Error::input("initial velocity must be nonzero"));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() || x0.iter().chain(v0).any(|v| !v.is_finite()) {
        return Err(Error::input("billiard data must be finite with t_end >= 0"));
    }
    let scale = 1.0 + x0.iter().chain(v0).fold(0.0_f64, |m, v| m.max(v.abs()));
    let eps = 1e-12 * scale;
    if !rs.in_chamber(x0, eps) {
        return Err(Error::input("starting point lies outside the closed chamber"));
    }

    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut path = BilliardPath { vertices: vec![(0.0, x.clone())], velocities: Vec::new(), events: Vec::new() };

    let reflect_at_walls = |t: f64, x: &[f64], v: &mut Vec<f64>, events: &mut Vec<BilliardEvent>| -> Result<()> {
        let walls: Vec<usize> = (0..rs.roots.len()).filter(|&k| rs.roots[k].eval(x).abs() <= eps).collect();
        let start = events.len();
        for _ in 0..MAX_CORNER_REFLECTIONS {
            // Most violated wall through x.
            let worst = walls
                .iter()
                .map(|&k| (k, rs.roots[k].eval(v) / rs.roots[k].norm_sqr().sqrt()))
                .filter(|(_, s)| *s < -1e-15 * scale)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((k, _)) = worst else {
                let corner = events.len() - start > 1 || walls.len() > 1;
                for e in &mut events[start..] {
                    e.corner = corner;
                }
                return Ok(());
            };
            let out = reflect(v, &rs.roots[k]);
            events.push(BilliardEvent {
                t,
                root: k,
                position: x.to_vec(),
                v_in: v.clone(),
                v_out: out.clone(),
                corner: false,
                walls: walls.clone(),
            });
            *v = out;
        }
        Err(Error::invariant("corner reflection did not terminate"))
    };

    reflect_at_walls(0.0, &x, &mut v, &mut path.events)?;
    loop {
        let mut hit = f64::INFINITY;
        for r in &rs.roots {
            let lx = r.eval(&x);
            let lv = r.eval(&v);
            // Walls through x were resolved above; v is tangent to them or
            // points inward (up to rounding).
            if lv < 0.0 && lx.abs() > eps {
                hit = hit.min(-lx.max(0.0) / lv);
            }
        }
        path.velocities.push(v.clone());
        if t + hit >= t_end {
            let dt = t_end - t;
            let xe = x.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
            path.vertices.push((t_end, xe));
            break;
        }
        t += hit;
        for (a, b) in x.iter_mut().zip(&v) {
            *a += hit * b;
        }
        // Snap onto the walls that were hit.
        for r in &rs.roots {
            let lx = r.eval(&x);
            if lx.abs() <= eps {
                let f = lx / r.norm_sqr();
                for (a, l) in x.iter_mut().zip(&r.coefficients) {
                    *a -= f * l;
                }
            }
        }
        path.vertices.push((t, x.clone()));
        reflect_at_walls(t, &x, &mut v, &mut path.events)?;
        if path.vertices.len() > 1_000_000 {
            return Err(Error::invariant("too many billiard reflections"));
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSystemReport {
    /// `max |[A, E] - λ(A) B|, |[A, B] - λ(A) E|` over samples.
    pub relation_defect: f64,
    pub antisymmetry_defect: f64,
    pub jacobi_defect: f64,
    /// Largest `𝔥`-component of `[Y, Z]` for sampled spin vectors; it is
    /// discarded by the reduced equations.
    pub cartan_leak: f64,
    pub samples: usize,
    pub passed: bool,
}

impl RootSystemReport {
    pub fn max_defect(&self) -> f64 {
        self.relation_defect.max(self.antisymmetry_defect).max(self.jacobi_defect)
    }
}

/// Checks the root-space relations on sampled section points, bracket
/// antisymmetry on all basis pairs and the Jacobi identity on sampled
/// triples. Deterministic (fixed seed).
pub fn verify_root_system(rs: &RestrictedRootSystem, samples: usize) -> RootSystemReport {
    let samples = samples.max(1);
    let d = rs.basis_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut relation: f64 = 0.0;
    for _ in 0..samples {
        let a: Vec<f64> = (0..rs.section_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut av = vec![0.0; d];
        for (k, v) in a.iter().enumerate() {
            av[rs.idx(BasisLabel::S(k))] = *v;
        }
        for (r, root) in rs.roots.iter().enumerate() {
            let l = root.eval(&a);
            for i in 0..root.multiplicity {
                let e = rs.idx(BasisLabel::E { root: r, i });
                let b = rs.idx(BasisLabel::B { root: r, i });
                for (src, dst) in [(e, b), (b, e)] {
                    let mut x = vec![0.0; d];
                    x[src] = 1.0;
                    let mut w = rs.bracket_vec(&av, &x);
                    w[dst] -= l;
                    relation = relation.max(w.iter().fold(0.0, |m, v| m.max(v.abs())));
                }
            }
        }
    }

    let mut antisym: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                antisym = antisym.max((rs.bracket_coefficient(a, b, c) + rs.bracket_coefficient(b, a, c)).abs());
            }
        }
    }

    let mut jacobi: f64 = 0.0;
    let mut leak: f64 = 0.0;
    let e_idx: Vec<usize> = (0..rs.roots.len()).flat_map(|r| rs.e_indices(r)).collect();
    for _ in 0..samples {
        let mut rand_vec = || (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (x, y, z) = (rand_vec(), rand_vec(), rand_vec());
        let t1 = rs.bracket_vec(&x, &rs.bracket_vec(&y, &z));
        let t2 = rs.bracket_vec(&y, &rs.bracket_vec(&z, &x));
        let t3 = rs.bracket_vec(&z, &rs.bracket_vec(&x, &y));
        for k in 0..d {
            jacobi = jacobi.max((t1[k] + t2[k] + t3[k]).abs());
        }
        let mut ys = vec![0.0; d];
        let mut zs = vec![0.0; d];
        for &k in &e_idx {
            ys[k] = rng.random_range(-1.0..1.0);
            zs[k] = rng.random_range(-1.0..1.0);
        }
        let w = rs.bracket_vec(&ys, &zs);
        for h in rs.h_indices() {
            leak = leak.max(w[h].abs());
        }
    }
    let passed = relation < VERIFY_TOL && antisym < VERIFY_TOL && jacobi < VERIFY_TOL;
    RootSystemReport { relation_defect: relation, antisymmetry_defect: antisym, jacobi_defect: jacobi, cartan_leak: leak, samples, passed }
}

#[derive(Debug, Serialize, Deserialize)]
struct RootFile {
    section_dim: usize,
    #[serde(default)]
    cartan_dim: usize,
    roots: Vec<Root>,
    #[serde(default)]
    bracket: Vec<BracketEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BracketEntry {
    x: String,
    y: String,
    z: String,
    value: f64,
}

impl RestrictedRootSystem {
    /// Parses root data from TOML: `section_dim`, optional `cartan_dim`,
    /// `[[roots]]` with `coefficients` and `multiplicity`, and sparse
    /// `[[bracket]]` entries `{ x, y, z, value }` meaning
    /// `[x, y] ∋ value · z`, with labels `H:k`, `S:k`, `E:root:i`, `B:root:i`.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: RootFile = toml::from_str(s).map_err(|e| Error::input(format!("root data: {e}")))?;
        let mut rs = RestrictedRootSystem::new(file.section_dim, file.cartan_dim, file.roots)?;
        for e in file.bracket {
            if !e.value.is_finite() {
                return Err(Error::input("non-finite bracket constant"));
            }
            rs.set_bracket(e.x.parse()?, e.y.parse()?, e.z.parse()?, e.value)?;
        }
        Ok(rs)
    }

    pub fn to_toml_string(&self) -> String {
        let d = self.basis_dim();
        let mut bracket = Vec::new();
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let v = self.bracket[(a * d + b) * d + c];
                    if v != 0.0 {
                        bracket.push(BracketEntry {
                            x: self.labels[a].to_string(),
                            y: self.labels[b].to_string(),
                            z: self.labels[c].to_string(),
                            value: v,
                        });
                    }
                }
            }
        }
        let file = RootFile { section_dim: self.section_dim, cartan_dim: self.cartan_dim, roots: self.roots.clone(), bracket };
        toml::to_string(&file).expect("root data serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_counts() {
        let rs = builtin_root_system(MatrixModel::symmetric(2));
        assert_eq!((rs.roots().len(), rs.roots()[0].multiplicity, rs.section_dim()), (1, 1, 2));
        let rs = builtin_root_system(MatrixModel::hermitian(3));
        assert_eq!(rs.roots().len(), 3);
        assert!(rs.roots().iter().all(|r| r.multiplicity == 2));
        assert_eq!(rs.all_roots().len(), 6);
    }

    #[test]
    fn builtin_bracket_is_antisymmetric() {
        let rs = builtin_root_system(MatrixModel::hermitian(3));
        let d = rs.basis_dim();
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    assert_eq!(rs.bracket_coefficient(a, b, c), -rs.bracket_coefficient(b, a, c));
                }
            }
        }
    }

    #[test]
    fn a1_verifies_tightly() {
        for model in [MatrixModel::symmetric(2), MatrixModel::hermitian(2)] {
            let rep = verify_root_system(&builtin_root_system(model), 10);
            assert!(rep.passed && rep.max_defect() < 1e-14, "{rep:?}");
        }
    }

    #[test]
    fn corrupted_bracket_fails() {
        let mut rs = builtin_root_system(MatrixModel::symmetric(3));
        let (s, e, b) = (BasisLabel::S(0), BasisLabel::E { root: 0, i: 0 }, BasisLabel::B { root: 0, i: 0 });
        let v = rs.bracket_coefficient(rs.idx(s), rs.idx(e), rs.idx(b));
        assert!(v != 0.0);
        rs.set_bracket(s, e, b, -v).unwrap();
        assert!(!verify_root_system(&rs, 5).passed);
    }

    #[test]
    fn free_motion_without_spin() {
        let rs = builtin_root_system(MatrixModel::hermitian(3));
        let s = PolarReducedState { a0: vec![2.0, 1.0, 0.0], p0: vec![0.1, 0.2, 0.3], y: vec![vec![0.0, 0.0]; 3] };
        let d = polar_vector_field(&s, &rs);
        assert_eq!(d.da0, s.p0);
        assert!(d.dp0.iter().all(|v| *v == 0.0));
        assert!(d.dy.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn single_root_force() {
        let rs = builtin_root_system(MatrixModel::symmetric(2));
        let s = PolarReducedState { a0: vec![1.5, 0.5], p0: vec![0.0, 0.0], y: vec![vec![0.7]] };
        let d = polar_vector_field(&s, &rs);
        let f = 0.49 / 1.0;
        assert!((d.dp0[0] - f).abs() < 1e-15 && (d.dp0[1] + f).abs() < 1e-15);
    }

    #[test]
    fn labels_round_trip() {
        for l in [BasisLabel::H(3), BasisLabel::S(0), BasisLabel::E { root: 2, i: 1 }, BasisLabel::B { root: 0, i: 0 }] {
            assert_eq!(l.to_string().parse::<BasisLabel>().unwrap(), l);
        }
        assert!("Q:1".parse::<BasisLabel>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let rs = builtin_root_system(MatrixModel::hermitian(3));
        let back = RestrictedRootSystem::from_toml_str(&rs.to_toml_string()).unwrap();
        assert_eq!(back, rs);
    }

    #[test]
    fn two_wall_reflection_swaps() {
        let rs = builtin_root_system(MatrixModel::symmetric(2));
        let path = billiard_geodesic(&rs, &[1.0, 0.0], &[-1.0, 1.0], 2.0).unwrap();
        assert_eq!(path.events.len(), 1);
        assert_eq!(path.events[0].v_out, vec![1.0, -1.0]);
        assert!((path.events[0].t - 0.5).abs() < 1e-15);
        assert_eq!(path.position_at(2.0), vec![2.0, -1.0]);
    }

    #[test]
    fn zero_velocity_rejected() {
        let rs = builtin_root_system(MatrixModel::symmetric(2));
        assert!(billiard_geodesic(&rs, &[1.0, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(billiard_geodesic(&rs, &[0.0, 1.0], &[1.0, 0.0], 1.0).is_err());
    }
}
