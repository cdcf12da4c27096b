//! Reduced Hamiltonian dynamics of straight lines `A + tα`: the classical
//! and spin Calogero-Moser systems.
//!
//! In chamber coordinates the flow is
//!
//! ```text
//! ȧ_i = p_i
//! ṗ_i = 2 Σ_{j: a_j ≠ a_i} |Y_ij|² / (a_i - a_j)³
//! Ẏ   = Z Y - Y Z,        Z_ij = Y_ij / (a_i - a_j)²
//! ```
//!
//! `Z` is the angular velocity of the eigenframe of `A + tα`, with sign
//! fixed so that `a(t)` reproduces the sorted spectrum of `A + tα`. Written
//! with the other common normalizations this is `Ẏ = [Y*, Z]` (Hermitian),
//! `Ẏ = [Y, -Z]` (real symmetric) and `Ẏ = -[Y, Z]`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{check_dim, Error, Result};
use crate::integrator::{self, DriverConfig, DriverError, OdeSystem, Segment, Stats, Verdict};
use crate::linalg::{self, CMatrix};
use crate::model::MatrixModel;
use crate::reduction::{ReducedState, DEGENERATE_SPIN_TOL};

/// Spin entries at or below this magnitude, relative to `1 + max|Y(0)|`,
/// are treated as exact zeros (decoupled pairs).
pub const DECOUPLED_TOL: f64 = 1e-13;

pub const DEFAULT_GAP_FLOOR: f64 = 1e-7;
pub const DEFAULT_SAMPLES: usize = 200;

/// Time derivative of a [`ReducedState`]; also used for tangent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDerivative {
    pub da: Vec<f64>,
    pub dp: Vec<f64>,
    pub dy: CMatrix,
}

impl ReducedDerivative {
    pub fn zeros(n: usize) -> Self {
        ReducedDerivative { da: vec![0.0; n], dp: vec![0.0; n], dy: CMatrix::zeros(n, n) }
    }

    pub fn max_abs_diff(&self, other: &ReducedDerivative) -> f64 {
        let v = self
            .da
            .iter()
            .zip(&other.da)
            .chain(self.dp.iter().zip(&other.dp))
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        v.max(linalg::max_abs(&(&self.dy - &other.dy)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `Ẏ = ZY - YZ`, the convention that matches the eigenvalue flow.
    #[default]
    Standard,
    /// `Ẏ = YZ - ZY`. Wrong on purpose; kept as a negative control.
    Flipped,
}

impl SignConvention {
    pub fn describe(self) -> &'static str {
        match self {
            SignConvention::Standard => "dY/dt = ZY - YZ, Z_ij = Y_ij/(a_i-a_j)^2",
            SignConvention::Flipped => "dY/dt = YZ - ZY (flipped, debug)",
        }
    }
}

impl fmt::Display for SignConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

/// Which pairs contribute to forces and to `Z`.
#[derive(Debug, Clone)]
struct PairMask {
    n: usize,
    frozen: Vec<bool>,
    zero_thr: f64,
}

impl PairMask {
    fn open(n: usize) -> Self {
        PairMask { n, frozen: vec![false; n * n], zero_thr: 0.0 }
    }

    fn active(&self, i: usize, j: usize, a: &[f64], y: &CMatrix) -> bool {
        i != j && !self.frozen[i * self.n + j] && a[i] != a[j] && y[(i, j)].norm() > self.zero_thr
    }

    fn swap(&mut self, i: usize, j: usize) {
        let n = self.n;
        for k in 0..n {
            self.frozen.swap(i * n + k, j * n + k);
        }
        for k in 0..n {
            self.frozen.swap(k * n + i, k * n + j);
        }
    }
}

fn z_masked(a: &[f64], y: &CMatrix, mask: &PairMask) -> CMatrix {
    let n = a.len();
    CMatrix::from_fn(n, n, |i, j| {
        if mask.active(i, j, a, y) {
            let d = a[i] - a[j];
            y[(i, j)] / (d * d)
        } else {
            Complex64::default()
        }
    })
}

/// `Z_ij = Y_ij/(a_i - a_j)²` off degenerate pairs, zero elsewhere.
pub fn z_matrix(s: &ReducedState) -> CMatrix {
    z_masked(&s.a, &s.y, &PairMask::open(s.dim()))
}

fn field_masked(a: &[f64], p: &[f64], y: &CMatrix, conv: SignConvention, mask: &PairMask) -> ReducedDerivative {
    let n = a.len();
    let z = z_masked(a, y, mask);
    let mut dp = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if mask.active(i, j, a, y) {
                let d = a[i] - a[j];
                acc += y[(i, j)].norm_sqr() / (d * d * d);
            }
        }
        dp[i] = 2.0 * acc;
    }
    let mut dy = match conv {
        SignConvention::Standard => &z * y - y * &z,
        SignConvention::Flipped => y * &z - &z * y,
    };
    for i in 0..n {
        dy[(i, i)] = Complex64::default();
        for j in 0..n {
            if i != j && a[i] == a[j] {
                dy[(i, j)] = Complex64::default();
            }
        }
    }
    ReducedDerivative { da: p.to_vec(), dp, dy }
}

/// Directional derivative of the field at `(a, p, y)` along `(δa, δp, δY)`.
fn field_tangent(
    a: &[f64],
    y: &CMatrix,
    delta: (&[f64], &[f64], &CMatrix),
    conv: SignConvention,
    mask: &PairMask,
) -> ReducedDerivative {
    let (da, dp_in, dyv) = delta;
    let n = a.len();
    let z = z_masked(a, y, mask);
    let mut dz = CMatrix::zeros(n, n);
    let mut ddp = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if !mask.active(i, j, a, y) {
                continue;
            }
            let d = a[i] - a[j];
            let dd = da[i] - da[j];
            let yij = y[(i, j)];
            dz[(i, j)] = dyv[(i, j)] / (d * d) - yij * (2.0 * dd / (d * d * d));
            acc += 2.0 * (yij.conj() * dyv[(i, j)]).re / (d * d * d) - 3.0 * yij.norm_sqr() * dd / (d * d * d * d);
        }
        ddp[i] = 2.0 * acc;
    }
    let lin = &dz * y + &z * dyv - dyv * &z - y * &dz;
    let mut ddy = match conv {
        SignConvention::Standard => lin,
        SignConvention::Flipped => -lin,
    };
    for i in 0..n {
        ddy[(i, i)] = Complex64::default();
        for j in 0..n {
            if i != j && a[i] == a[j] {
                ddy[(i, j)] = Complex64::default();
            }
        }
    }
    ReducedDerivative { da: dp_in.to_vec(), dp: ddp, dy: ddy }
}

/// The reduced vector field in the standard sign convention. Pairs with
/// `a_i = a_j` are excluded from the sums.
pub fn vector_field(s: &ReducedState, model: MatrixModel) -> ReducedDerivative {
    debug_assert_eq!(model.n, s.dim());
    field_masked(&s.a, &s.p, &s.y, SignConvention::Standard, &PairMask::open(s.dim()))
}

pub fn vector_field_with(s: &ReducedState, conv: SignConvention) -> ReducedDerivative {
    field_masked(&s.a, &s.p, &s.y, conv, &PairMask::open(s.dim()))
}

/// Linearization of [`vector_field`] at `s` applied to `ds`.
pub fn vector_field_tangent(s: &ReducedState, ds: &ReducedDerivative) -> ReducedDerivative {
    field_tangent(&s.a, &s.y, (&ds.da, &ds.dp, &ds.dy), SignConvention::Standard, &PairMask::open(s.dim()))
}

/// `h = ½ Σ p_i² + ½ Σ_{a_i ≠ a_j} |Y_ij|² / (a_i - a_j)²`.
pub fn hamiltonian_reduced(s: &ReducedState) -> f64 {
    let n = s.dim();
    let mut h = 0.5 * s.p.iter().map(|v| v * v).sum::<f64>();
    for i in 0..n {
        for j in 0..n {
            if i != j && s.a[i] != s.a[j] {
                let d = s.a[i] - s.a[j];
                h += 0.5 * s.y[(i, j)].norm_sqr() / (d * d);
            }
        }
    }
    h
}

/// `dh/dt` along `v`, evaluated analytically. Zero for any field whose
/// spin part is a commutator with `Z`.
pub fn energy_rate(s: &ReducedState, v: &ReducedDerivative) -> f64 {
    let n = s.dim();
    let mut r: f64 = s.p.iter().zip(&v.dp).map(|(p, dp)| p * dp).sum();
    for i in 0..n {
        for j in 0..n {
            if i != j && s.a[i] != s.a[j] {
                let d = s.a[i] - s.a[j];
                let yij = s.y[(i, j)];
                r += -yij.norm_sqr() * (v.da[i] - v.da[j]) / (d * d * d) + (yij.conj() * v.dy[(i, j)]).re / (d * d);
            }
        }
    }
    r
}

/// `Tr((Y Y*)^k)` for `k = 1..=kmax`.
pub fn casimirs(y: &CMatrix, kmax: usize) -> Vec<f64> {
    let m = y * y.adjoint();
    let mut power = m.clone();
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        if k > 1 {
            power = &power * &m;
        }
        out.push(power.trace().re);
    }
    out
}

/// Spin matrix of rank-one momentum after gauge fixing: `Y_ij = -c·i` for
/// `i ≠ j`.
pub fn rank_one_spin(n: usize, c: f64) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| if i == j { Complex64::default() } else { Complex64::new(0.0, -c) })
}

/// Classical Calogero-Moser field `ä_i = 2 Σ_{j≠i} c² / (a_i - a_j)³`;
/// coordinates sharing a degenerate block exert no force on each other.
pub fn classical_cm_field(a: &[f64], p: &[f64], c: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(a.len(), p.len())?;
    if a.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::input("chamber position must be sorted non-increasing"));
    }
    let n = a.len();
    let dp = (0..n)
        .map(|i| {
            2.0 * (0..n)
                .filter(|&j| j != i && a[j] != a[i])
                .map(|j| {
                    let d = a[i] - a[j];
                    c * c / (d * d * d)
                })
                .sum::<f64>()
        })
        .collect();
    Ok((p.to_vec(), dp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub energy: f64,
    /// `Tr((YY*)^k)`, `k = 1, 2, 3`.
    pub casimirs: Vec<f64>,
    /// `min_{i<j} |a_i - a_j|` (zero on walls; `+inf` for `n = 1`).
    pub min_gap: f64,
}

impl Diagnostics {
    pub fn of(s: &ReducedState) -> Self {
        let min_gap = s.a.windows(2).map(|w| (w[0] - w[1]).abs()).fold(f64::INFINITY, f64::min);
        Diagnostics { energy: hamiltonian_reduced(s), casimirs: casimirs(&s.y, 3), min_gap }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: ReducedState,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// Decoupled coordinates `i`, `i+1` met; labels (and momenta) were
    /// exchanged, i.e. the state was reflected in the wall `a_i = a_{i+1}`.
    WallReflection { i: usize, j: usize },
    /// A coupled pair came closer than the gap floor; the step was rejected.
    GapUnderflow { i: usize, j: usize, gap: f64 },
    /// A spin entry on the frozen degenerate pattern left zero.
    FrozenPatternDrift { i: usize, j: usize, magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: MatrixModel,
    pub convention: SignConvention,
    /// Dense output at the requested times.
    pub samples: Vec<TrajectorySample>,
    /// State at `t = 0` and after every accepted step.
    pub steps: Vec<TrajectorySample>,
    pub events: Vec<Event>,
    /// Degenerate pairs `(i, j)`, `i < j`, frozen at `t = 0` (initial labels).
    pub frozen_pairs: Vec<(usize, usize)>,
    pub stats: Stats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn step_times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> Option<&ReducedState> {
        self.steps.last().map(|s| &s.state)
    }

    fn all_records(&self) -> impl Iterator<Item = &TrajectorySample> {
        self.steps.iter().chain(&self.samples)
    }

    /// `max |h(t) - h(0)| / max(1, |h(0)|)` over samples and steps.
    pub fn max_energy_drift(&self) -> f64 {
        let Some(first) = self.steps.first() else { return 0.0 };
        let h0 = first.diagnostics.energy;
        self.all_records()
            .map(|r| (r.diagnostics.energy - h0).abs() / h0.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Largest relative drift of `Tr((YY*)^k)` over all records, per `k`.
    pub fn max_casimir_drift(&self) -> Vec<f64> {
        let Some(first) = self.steps.first() else { return Vec::new() };
        let c0 = &first.diagnostics.casimirs;
        (0..c0.len())
            .map(|k| {
                let scale = if c0[k].abs() > 0.0 { c0[k].abs() } else { 1.0 };
                self.all_records()
                    .map(|r| (r.diagnostics.casimirs[k] - c0[k]).abs() / scale)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn count_events(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub gap_floor: f64,
    /// Output times; `None` means `DEFAULT_SAMPLES` uniform intervals on
    /// `[0, t_end]`.
    pub sample_times: Option<Vec<f64>>,
    pub convention: SignConvention,
    pub max_steps: usize,
    pub h_min: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rtol: 1e-10,
            atol: 1e-12,
            gap_floor: DEFAULT_GAP_FLOOR,
            sample_times: None,
            convention: SignConvention::Standard,
            max_steps: 2_000_000,
            h_min: 1e-14,
        }
    }
}

impl IntegrateOptions {
    /// `rtol = tol`, `atol = tol / 100`.
    pub fn with_tol(tol: f64) -> Self {
        IntegrateOptions { rtol: tol, atol: tol * 1e-2, ..Default::default() }
    }
}

/// `count` uniform intervals on `[0, t_end]` (`count + 1` points).
pub fn uniform_times(t_end: f64, count: usize) -> Vec<f64> {
    let count = count.max(1);
    (0..=count).map(|k| if k == count { t_end } else { t_end * k as f64 / count as f64 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailureKind {
    StepUnderflow { h: f64 },
    MaxSteps,
    NonFinite,
    FrozenPatternBroken { i: usize, j: usize },
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::StepUnderflow { h } => write!(f, "step size underflow (h = {h:.3e}) near a singular configuration"),
            FailureKind::MaxSteps => f.write_str("maximum number of steps exceeded"),
            FailureKind::NonFinite => f.write_str("non-finite state"),
            FailureKind::FrozenPatternBroken { i, j } => write!(f, "spin entry ({i}, {j}) on the frozen degenerate pattern became nonzero"),
        }
    }
}

/// Integration failure carrying the trajectory computed so far.
#[derive(Debug, Clone, Error)]
#[error("integration failed at t = {t}: {kind}")]
pub struct IntegrationError {
    pub t: f64,
    pub kind: FailureKind,
    pub partial: Box<Trajectory>,
}

/// Packed layout: `[a (n), p (n), (Re, Im) of Y_ij for i < j]`, optionally
/// followed by the same layout for a tangent vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
}

impl Layout {
    fn block(&self) -> usize {
        2 * self.n + self.n * (self.n - 1)
    }

    fn pack(&self, a: &[f64], p: &[f64], y: &CMatrix, out: &mut [f64]) {
        let n = self.n;
        out[..n].copy_from_slice(a);
        out[n..2 * n].copy_from_slice(p);
        let mut k = 2 * n;
        for i in 0..n {
            for j in i + 1..n {
                out[k] = y[(i, j)].re;
                out[k + 1] = y[(i, j)].im;
                k += 2;
            }
        }
    }

    fn unpack_y(&self, buf: &[f64]) -> CMatrix {
        let n = self.n;
        let mut y = CMatrix::zeros(n, n);
        let mut k = 2 * n;
        for i in 0..n {
            for j in i + 1..n {
                let z = Complex64::new(buf[k], buf[k + 1]);
                y[(i, j)] = z;
                y[(j, i)] = -z.conj();
                k += 2;
            }
        }
        y
    }

    fn unpack(&self, buf: &[f64]) -> ReducedState {
        let n = self.n;
        ReducedState { a: buf[..n].to_vec(), p: buf[n..2 * n].to_vec(), y: self.unpack_y(buf) }
    }

    fn unpack_tangent(&self, buf: &[f64]) -> ReducedDerivative {
        let n = self.n;
        ReducedDerivative { da: buf[..n].to_vec(), dp: buf[n..2 * n].to_vec(), dy: self.unpack_y(buf) }
    }

    /// Exchanges labels `i` and `j` inside one packed block.
    fn swap_labels(&self, buf: &mut [f64], i: usize, j: usize) {
        let n = self.n;
        buf.swap(i, j);
        buf.swap(n + i, n + j);
        let mut y = self.unpack_y(buf);
        y.swap_rows(i, j);
        y.swap_columns(i, j);
        let a = buf[..n].to_vec();
        let p = buf[n..2 * n].to_vec();
        self.pack(&a, &p, &y, buf);
    }
}

/// The reduced flow as an [`OdeSystem`], with wall handling.
struct ReducedFlow {
    layout: Layout,
    tangent: bool,
    conv: SignConvention,
    mask: PairMask,
    gap_floor: f64,
    events: Vec<Event>,
    failure: Option<(f64, FailureKind)>,
}

impl ReducedFlow {
    fn coupled(&self, y: &CMatrix, i: usize, j: usize) -> bool {
        y[(i, j)].norm() > self.mask.zero_thr
    }

    fn swap_eps(a: &[f64]) -> f64 {
        1e-12 * (1.0 + a.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }
}

impl OdeSystem for ReducedFlow {
    fn dim(&self) -> usize {
        self.layout.block() * if self.tangent { 2 } else { 1 }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let l = self.layout;
        let b = l.block();
        let s = l.unpack(&y[..b]);
        let f = field_masked(&s.a, &s.p, &s.y, self.conv, &self.mask);
        l.pack(&f.da, &f.dp, &f.dy, &mut dy[..b]);
        if self.tangent {
            let d = l.unpack_tangent(&y[b..]);
            let g = field_tangent(&s.a, &s.y, (&d.da, &d.dp, &d.dy), self.conv, &self.mask);
            l.pack(&g.da, &g.dp, &g.dy, &mut dy[b..]);
        }
    }

    fn inspect(&mut self, seg: &Segment<'_>) -> Verdict {
        let l = self.layout;
        let n = l.n;
        let b = l.block();
        let a1 = &seg.y1[..n];
        let y1 = l.unpack_y(&seg.y1[..b]);

        for i in 0..n {
            for j in i + 1..n {
                if self.mask.frozen[i * n + j] && y1[(i, j)].norm() > DEGENERATE_SPIN_TOL {
                    let magnitude = y1[(i, j)].norm();
                    self.events.push(Event { t: seg.t1, kind: EventKind::FrozenPatternDrift { i, j, magnitude } });
                    self.failure = Some((seg.t1, FailureKind::FrozenPatternBroken { i, j }));
                    return Verdict::Halt;
                }
            }
        }

        for i in 0..n {
            for j in i + 1..n {
                if !self.coupled(&y1, i, j) || self.mask.frozen[i * n + j] {
                    continue;
                }
                let gap = a1[i] - a1[j];
                if gap < self.gap_floor {
                    let dup = self.events.last().is_some_and(|e| {
                        matches!(e.kind, EventKind::GapUnderflow { i: ei, j: ej, .. } if ei == i && ej == j) && e.t == seg.t0
                    });
                    if !dup {
                        self.events.push(Event { t: seg.t0, kind: EventKind::GapUnderflow { i, j, gap } });
                    }
                    return Verdict::Reject;
                }
            }
        }

        let eps = Self::swap_eps(a1);
        let mut first: Option<f64> = None;
        for i in 0..n.saturating_sub(1) {
            let g1 = a1[i] - a1[i + 1];
            if g1 >= -eps || self.coupled(&y1, i, i + 1) {
                continue;
            }
            let g0 = seg.y0[i] - seg.y0[i + 1];
            if g0 < 0.0 {
                continue;
            }
            let mut buf = vec![0.0; seg.y0.len()];
            let mut gap_at = |t: f64| {
                seg.interpolate(t, &mut buf);
                buf[i] - buf[i + 1]
            };
            let (mut lo, mut hi) = (seg.t0, seg.t1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if gap_at(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            first = Some(first.map_or(hi, |f: f64| f.min(hi)));
        }
        match first {
            Some(ts) => Verdict::LandAt(ts),
            None => Verdict::Accept,
        }
    }

    fn after_step(&mut self, t: f64, y: &mut [f64]) -> bool {
        let l = self.layout;
        let n = l.n;
        let b = l.block();
        let mut changed = false;
        loop {
            let mut swapped = false;
            let eps = Self::swap_eps(&y[..n]);
            let ymat = l.unpack_y(&y[..b]);
            for i in 0..n.saturating_sub(1) {
                if self.coupled(&ymat, i, i + 1) || self.mask.frozen[i * n + i + 1] {
                    continue;
                }
                let gap = y[i] - y[i + 1];
                let approaching = y[n + i] < y[n + i + 1];
                if gap < 0.0 || (gap <= eps && approaching) {
                    l.swap_labels(&mut y[..b], i, i + 1);
                    if self.tangent {
                        l.swap_labels(&mut y[b..], i, i + 1);
                    }
                    self.mask.swap(i, i + 1);
                    let mid = 0.5 * (y[i] + y[i + 1]);
                    y[i] = mid;
                    y[i + 1] = mid;
                    self.events.push(Event { t, kind: EventKind::WallReflection { i, j: i + 1 } });
                    swapped = true;
                    changed = true;
                    break;
                }
            }
            if !swapped {
                break;
            }
        }
        changed
    }
}

struct Prepared {
    flow: ReducedFlow,
    y0: Vec<f64>,
    frozen_pairs: Vec<(usize, usize)>,
}

fn prepare(
    s0: &ReducedState,
    ds0: Option<&ReducedDerivative>,
    model: MatrixModel,
    opts: &IntegrateOptions,
) -> Result<Prepared> {
    s0.validate(model)?;
    let n = model.n;
    let scale = 1.0 + linalg::max_abs(&s0.y);
    let zero_thr = DECOUPLED_TOL * scale;
    let mut y = s0.y.clone();
    let mut frozen = vec![false; n * n];
    let mut frozen_pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if y[(i, j)].norm() <= zero_thr {
                y[(i, j)] = Complex64::default();
            }
            if s0.a[i] == s0.a[j] {
                y[(i, j)] = Complex64::default();
                frozen[i * n + j] = true;
                if i < j {
                    frozen_pairs.push((i, j));
                }
            }
        }
    }
    let layout = Layout { n };
    let b = layout.block();
    let mut y0 = vec![0.0; b * if ds0.is_some() { 2 } else { 1 }];
    layout.pack(&s0.a, &s0.p, &y, &mut y0[..b]);
    if let Some(d) = ds0 {
        check_dim(n, d.da.len())?;
        check_dim(n, d.dp.len())?;
        check_dim(n, d.dy.nrows())?;
        if linalg::skew_hermitian_defect(&d.dy) > 1e-12 * (1.0 + linalg::max_abs(&d.dy)) {
            return Err(Error::input("spin perturbation must be skew-Hermitian"));
        }
        layout.pack(&d.da, &d.dp, &d.dy, &mut y0[b..]);
    }
    Ok(Prepared {
        flow: ReducedFlow {
            layout,
            tangent: ds0.is_some(),
            conv: opts.convention,
            mask: PairMask { n, frozen, zero_thr },
            gap_floor: opts.gap_floor,
            events: Vec::new(),
            failure: None,
        },
        y0,
        frozen_pairs,
    })
}

struct Recorder {
    layout: Layout,
    tangent: bool,
    pending: Vec<f64>,
    next: usize,
    samples: Vec<TrajectorySample>,
    steps: Vec<TrajectorySample>,
    sample_tangents: Vec<ReducedDerivative>,
    buf: Vec<f64>,
}

impl Recorder {
    fn new(layout: Layout, tangent: bool, mut times: Vec<f64>, dim: usize) -> Self {
        times.sort_by(f64::total_cmp);
        times.dedup();
        Recorder {
            layout,
            tangent,
            pending: times,
            next: 0,
            samples: Vec::new(),
            steps: Vec::new(),
            sample_tangents: Vec::new(),
            buf: vec![0.0; dim],
        }
    }

    fn record(&self, t: f64, buf: &[f64]) -> TrajectorySample {
        let state = self.layout.unpack(&buf[..self.layout.block()]);
        let diagnostics = Diagnostics::of(&state);
        TrajectorySample { t, state, diagnostics }
    }

    fn start(&mut self, y0: &[f64]) {
        self.steps.push(self.record(0.0, y0));
        while self.next < self.pending.len() && self.pending[self.next] <= 0.0 {
            let t = self.pending[self.next];
            self.samples.push(self.record(t, y0));
            if self.tangent {
                self.sample_tangents.push(self.layout.unpack_tangent(&y0[self.layout.block()..]));
            }
            self.next += 1;
        }
    }

    fn segment(&mut self, seg: &Segment<'_>) {
        while self.next < self.pending.len() && self.pending[self.next] <= seg.t1 {
            let t = self.pending[self.next];
            let mut buf = std::mem::take(&mut self.buf);
            seg.interpolate(t, &mut buf);
            self.samples.push(self.record(t, &buf));
            if self.tangent {
                self.sample_tangents.push(self.layout.unpack_tangent(&buf[self.layout.block()..]));
            }
            self.buf = buf;
            self.next += 1;
        }
        self.steps.push(self.record(seg.t1, seg.y1));
    }
}

enum Mesh<'a> {
    Adaptive { t_end: f64, cfg: DriverConfig },
    Fixed(&'a [f64]),
}

fn run(
    prepared: Prepared,
    model: MatrixModel,
    mesh: Mesh<'_>,
    opts: &IntegrateOptions,
) -> Result<(Trajectory, Vec<ReducedDerivative>), IntegrationError> {
    let t_end = match &mesh {
        Mesh::Adaptive { t_end, .. } => *t_end,
        Mesh::Fixed(m) => m.last().copied().unwrap_or(0.0),
    };
    let Prepared { mut flow, y0, frozen_pairs } = prepared;

    let times = opts.sample_times.clone().unwrap_or_else(|| uniform_times(t_end, DEFAULT_SAMPLES));
    let mut rec = Recorder::new(flow.layout, flow.tangent, times, y0.len());
    let mut y_start = y0.clone();
    flow.after_step(0.0, &mut y_start);
    rec.start(&y_start);

    let outcome = match mesh {
        Mesh::Adaptive { t_end, cfg } => integrator::integrate_adaptive(&mut flow, &y_start, t_end, &cfg, &mut |seg| rec.segment(seg)),
        Mesh::Fixed(m) => integrator::integrate_on_mesh(&mut flow, &y_start, m, &mut |seg| rec.segment(seg)),
    };

    let (stats, err) = match outcome {
        Ok(stats) => (stats, None),
        Err((e, stats)) => (stats, Some(e)),
    };
    let traj = Trajectory {
        model,
        convention: opts.convention,
        samples: rec.samples,
        steps: rec.steps,
        events: flow.events,
        frozen_pairs,
        stats,
    };
    match err {
        None => Ok((traj, rec.sample_tangents)),
        Some(e) => {
            let (t, kind) = match (e, flow.failure) {
                (_, Some((t, kind))) => (t, kind),
                (DriverError::StepUnderflow { t, h }, None) => (t, FailureKind::StepUnderflow { h }),
                (DriverError::MaxSteps { t }, None) => (t, FailureKind::MaxSteps),
                (DriverError::NonFinite { t }, None) | (DriverError::Halted { t }, None) => (t, FailureKind::NonFinite),
            };
            log::warn!("integration stopped at t = {t}: {kind}");
            Err(IntegrationError { t, kind, partial: Box::new(traj) })
        }
    }
}

fn driver_config(opts: &IntegrateOptions) -> DriverConfig {
    DriverConfig { rtol: opts.rtol, atol: opts.atol, h_init: None, h_min: opts.h_min, max_steps: opts.max_steps }
}

fn check_run_args(s0: &ReducedState, model: MatrixModel, t_end: f64, opts: &IntegrateOptions) -> Result<()> {
    s0.validate(model)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::input("t_end must be positive and finite"));
    }
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::input("tolerances must be positive"));
    }
    if !(opts.gap_floor >= 0.0) {
        return Err(Error::input("gap floor must be non-negative"));
    }
    Ok(())
}

/// Integrates the reduced flow from `s0` over `[0, t_end]` with relative
/// tolerance `tol` and default options.
pub fn integrate(s0: &ReducedState, model: MatrixModel, t_end: f64, tol: f64) -> Result<Result<Trajectory, IntegrationError>> {
    integrate_with(s0, model, t_end, &IntegrateOptions::with_tol(tol))
}

/// Integrates the reduced flow. The outer `Result` reports invalid
/// arguments; the inner one an integration failure with partial output.
pub fn integrate_with(
    s0: &ReducedState,
    model: MatrixModel,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Result<Trajectory, IntegrationError>> {
    check_run_args(s0, model, t_end, opts)?;
    let prepared = prepare(s0, None, model, opts)?;
    Ok(run(prepared, model, Mesh::Adaptive { t_end, cfg: driver_config(opts) }, opts).map(|(t, _)| t))
}

/// Replays the reduced flow on a fixed mesh of step times (`mesh[0] = 0`),
/// e.g. the accepted steps of another run.
pub fn integrate_on_mesh(
    s0: &ReducedState,
    model: MatrixModel,
    mesh: &[f64],
    opts: &IntegrateOptions,
) -> Result<Result<Trajectory, IntegrationError>> {
    if mesh.first() != Some(&0.0) || mesh.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("mesh must start at 0 and be strictly increasing"));
    }
    let prepared = prepare(s0, None, model, opts)?;
    Ok(run(prepared, model, Mesh::Fixed(mesh), opts).map(|(t, _)| t))
}

/// A trajectory together with its tangent (Jacobi) vectors at the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalTrajectory {
    pub trajectory: Trajectory,
    pub tangents: Vec<ReducedDerivative>,
}

pub fn variational_flow(
    s0: &ReducedState,
    ds0: &ReducedDerivative,
    model: MatrixModel,
    t_end: f64,
    tol: f64,
) -> Result<Result<VariationalTrajectory, IntegrationError>> {
    variational_flow_with(s0, ds0, model, t_end, &IntegrateOptions::with_tol(tol))
}

/// Integrates the state together with a tangent vector obeying the
/// linearized field.
pub fn variational_flow_with(
    s0: &ReducedState,
    ds0: &ReducedDerivative,
    model: MatrixModel,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Result<VariationalTrajectory, IntegrationError>> {
    check_run_args(s0, model, t_end, opts)?;
    let prepared = prepare(s0, Some(ds0), model, opts)?;
    Ok(run(prepared, model, Mesh::Adaptive { t_end, cfg: driver_config(opts) }, opts)
        .map(|(trajectory, tangents)| VariationalTrajectory { trajectory, tangents }))
}

impl ReducedState {
    /// Time reversal `(a, p, Y) -> (a, -p, -Y)`.
    pub fn reversed(&self) -> ReducedState {
        ReducedState { a: self.a.clone(), p: self.p.iter().map(|v| -v).collect(), y: -&self.y }
    }

    /// `self + eps * d`.
    pub fn perturbed(&self, d: &ReducedDerivative, eps: f64) -> ReducedState {
        ReducedState {
            a: self.a.iter().zip(&d.da).map(|(x, v)| x + eps * v).collect(),
            p: self.p.iter().zip(&d.dp).map(|(x, v)| x + eps * v).collect(),
            y: &self.y + d.dy.map(|z| z * eps),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    fn sym2(y12: f64) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(y12, 0.0), c(-y12, 0.0), c(0.0, 0.0)])
    }

    #[test]
    fn free_state_has_free_field() {
        let s = ReducedState::free(vec![2.0, 1.0, 0.0], vec![0.5, -1.0, 2.0]);
        let f = vector_field(&s, MatrixModel::hermitian(3));
        assert_eq!(f.da, s.p);
        assert_eq!(f.dp, vec![0.0; 3]);
        assert_eq!(linalg::max_abs(&f.dy), 0.0);
    }

    #[test]
    fn rank_one_two_body_force() {
        let s = ReducedState { a: vec![1.0, 0.0], p: vec![0.0, 0.0], y: rank_one_spin(2, 1.0) };
        let f = vector_field(&s, MatrixModel::hermitian(2));
        assert_eq!(f.dp, vec![2.0, -2.0]);
        let (_, dp) = classical_cm_field(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(dp, vec![2.0, -2.0]);
    }

    #[test]
    fn symmetric_two_by_two_field() {
        let s = ReducedState { a: vec![1.0, 0.0], p: vec![0.0, 0.0], y: sym2(1.0) };
        let f = vector_field(&s, MatrixModel::symmetric(2));
        assert_eq!(f.dp[0], 2.0);
        assert_eq!(linalg::max_abs(&f.dy), 0.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let s = ReducedState::free(vec![1.0, 0.0], vec![1.0, 2.0]);
        assert_eq!(hamiltonian_reduced(&s), 2.5);
        let a = vec![2.0, 0.5, -1.0];
        let p = vec![0.3, -0.2, 0.1];
        let cc = 0.7;
        let s = ReducedState { a: a.clone(), p: p.clone(), y: rank_one_spin(3, cc) };
        let mut want = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    want += 0.5 * cc * cc / (a[i] - a[j]).powi(2);
                }
            }
        }
        assert!((hamiltonian_reduced(&s) - want).abs() < 1e-14);
    }

    #[test]
    fn casimir_examples() {
        assert_eq!(casimirs(&CMatrix::zeros(3, 3), 3), vec![0.0; 3]);
        let cc = 1.5;
        let y = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, cc), c(0.0, cc), c(0.0, 0.0)]);
        assert!((casimirs(&y, 1)[0] - 2.0 * cc * cc).abs() < 1e-14);
    }

    #[test]
    fn classical_field_zero_coupling_is_free() {
        let (da, dp) = classical_cm_field(&[3.0, 1.0, 0.0], &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(da, vec![1.0, 2.0, 3.0]);
        assert_eq!(dp, vec![0.0; 3]);
        assert!(classical_cm_field(&[0.0, 1.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn degenerate_pairs_skip_forces() {
        let (_, dp) = classical_cm_field(&[1.0, 1.0, 0.0], &[0.0; 3], 1.0).unwrap();
        assert_eq!(dp, vec![2.0, 2.0, -4.0]);
    }

    #[test]
    fn layout_round_trip_and_swap() {
        let l = Layout { n: 3 };
        let y = CMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                c(0.0, 0.0)
            } else if i < j {
                c(i as f64 + 1.0, j as f64)
            } else {
                c(-(j as f64 + 1.0), i as f64)
            }
        });
        let s = ReducedState { a: vec![3.0, 2.0, 1.0], p: vec![0.1, 0.2, 0.3], y };
        let mut buf = vec![0.0; l.block()];
        l.pack(&s.a, &s.p, &s.y, &mut buf);
        assert_eq!(l.unpack(&buf), s);
        l.swap_labels(&mut buf, 0, 1);
        let t = l.unpack(&buf);
        assert_eq!(t.a, vec![2.0, 3.0, 1.0]);
        assert_eq!(t.y[(0, 2)], s.y[(1, 2)]);
        assert_eq!(t.y[(0, 1)], s.y[(1, 0)]);
    }

    #[test]
    fn uniform_times_hits_end() {
        let t = uniform_times(1.0, 200);
        assert_eq!(t.len(), 201);
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 1.0);
    }
}
