//! Adaptive Dormand-Prince 5(4) integration with step inspection hooks and
//! dense output (cubic Hermite plus the pair's quartic correction term).

use std::fmt;

/// A first-order system `y' = f(t, y)` on a flat state vector.
///
/// `inspect` and `after_step` let a system veto steps (singularities) or
/// request that a step end exactly at an event time, and then modify the
/// state there (relabelings, reflections).
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    fn inspect(&mut self, _seg: &Segment<'_>) -> Verdict {
        Verdict::Accept
    }

    /// Called after each accepted step. Returns `true` if `y` was modified.
    fn after_step(&mut self, _t: f64, _y: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Accept,
    /// Reject the step and retry with a smaller one.
    Reject,
    /// Retry so that the step ends exactly at the given time.
    LandAt(f64),
    /// Accept the step, then stop integrating.
    Halt,
}

/// One accepted step with endpoint values and derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub f0: &'a [f64],
    pub y1: &'a [f64],
    pub f1: &'a [f64],
    /// Quartic correction of the Dormand-Prince continuous extension
    /// (`None`: plain cubic Hermite).
    pub dense: Option<&'a [f64]>,
}

impl Segment<'_> {
    /// Cubic Hermite interpolation at `t` in `[t0, t1]`, plus the
    /// fourth-order continuous-extension term when available.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            out.copy_from_slice(self.y1);
            return;
        }
        if t == self.t1 {
            out.copy_from_slice(self.y1);
            return;
        }
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i] + h * h10 * self.f0[i] + h01 * self.y1[i] + h * h11 * self.f1[i];
        }
        if let Some(d) = self.dense {
            let w = s * s * (1.0 - s) * (1.0 - s);
            for (o, v) in out.iter_mut().zip(d) {
                *o += w * v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig { rtol: 1e-10, atol: 1e-12, h_init: None, h_min: 1e-14, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverError {
    StepUnderflow { t: f64, h: f64 },
    MaxSteps { t: f64 },
    NonFinite { t: f64 },
    Halted { t: f64 },
}

impl fmt::Display for DriverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverError::StepUnderflow { t, h } => write!(f, "step size underflow (h = {h:.3e}) at t = {t}"),
            DriverError::MaxSteps { t } => write!(f, "maximum number of steps exceeded at t = {t}"),
            DriverError::NonFinite { t } => write!(f, "non-finite state at t = {t}"),
            DriverError::Halted { t } => write!(f, "integration halted by the system at t = {t}"),
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// Continuous extension (Hairer & Wanner's dense output for this pair).
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    dense: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], y1: vec![0.0; n], dense: vec![0.0; n] }
    }
}

/// One Dormand-Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
/// Leaves `y(t+h)` in `ws.y1`, `f(t+h, y1)` in `ws.k[6]`; returns the
/// scaled RMS error estimate (`NaN` if the trial is non-finite).
fn dp_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64, cfg: &DriverConfig, ws: &mut Workspace) -> f64 {
    let n = y.len();
    for s in 1..7 {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..s {
                acc += A[s][j] * ws.k[j][i];
            }
            ws.tmp[i] = y[i] + h * acc;
        }
        sys.rhs(t + C[s] * h, &ws.tmp, &mut ws.k[s]);
        if s == 6 {
            ws.y1.copy_from_slice(&ws.tmp);
        }
    }
    let mut sum = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for s in 0..7 {
            e += E[s] * ws.k[s][i];
        }
        let sc = cfg.atol + cfg.rtol * y[i].abs().max(ws.y1[i].abs());
        let r = h * e / sc;
        sum += r * r;
    }
    let err = (sum / n.max(1) as f64).sqrt();
    for i in 0..n {
        let mut acc = 0.0;
        for s in 0..7 {
            acc += D[s] * ws.k[s][i];
        }
        ws.dense[i] = h * acc;
    }
    if ws.y1.iter().all(|v| v.is_finite()) && ws.k[6].iter().all(|v| v.is_finite()) {
        err
    } else {
        f64::NAN
    }
}

fn initial_step<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], f0: &[f64], cfg: &DriverConfig, span: f64) -> f64 {
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d0 = rms(y0);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 5.0) };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates from `t = 0` to `t_end`, calling `on_segment` for each
/// accepted step (before any `after_step` modification of its endpoint).
pub fn integrate_adaptive<S: OdeSystem + ?Sized>(
    sys: &mut S,
    y0: &[f64],
    t_end: f64,
    cfg: &DriverConfig,
    on_segment: &mut dyn FnMut(&Segment<'_>),
) -> Result<Stats, (DriverError, Stats)> {
    let n = sys.dim();
    assert_eq!(n, y0.len(), "state length does not match system dimension");
    let mut stats = Stats::default();
    let mut ws = Workspace::new(n);
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    if sys.after_step(t, &mut y) {
        log::debug!("state adjusted at t = 0");
    }
    sys.rhs(t, &y, &mut f);
    stats.rhs_evals += 1;
    if !y.iter().chain(&f).all(|v| v.is_finite()) {
        return Err((DriverError::NonFinite { t }, stats));
    }
    let mut h = cfg.h_init.unwrap_or_else(|| initial_step(&*sys, t, &y, &f, cfg, t_end));
    let mut last_rejected = false;
    let mut landing: Option<f64> = None;

    while t < t_end {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err((DriverError::MaxSteps { t }, stats));
        }
        let mut target = landing.unwrap_or(t + h);
        if target > t_end || t_end - target < 1e-12 * t_end.abs().max(1.0) {
            target = t_end;
        }
        let h_try = target - t;
        if h_try < cfg.h_min {
            if target == t_end && h_try > 0.0 {
                // final sliver
            } else {
                return Err((DriverError::StepUnderflow { t, h: h_try }, stats));
            }
        }

        ws.k[0].copy_from_slice(&f);
        let err = dp_step(&*sys, t, &y, h_try, cfg, &mut ws);
        stats.rhs_evals += 6;

        if !(err <= 1.0) {
            stats.rejected += 1;
            let fac = if err.is_nan() { 0.25 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) };
            h = h_try * fac;
            landing = None;
            last_rejected = true;
            continue;
        }

        let forced = landing.take().is_some();
        let verdict = {
            let seg = Segment { t0: t, t1: target, y0: &y, f0: &f, y1: &ws.y1, f1: &ws.k[6], dense: Some(&ws.dense) };
            sys.inspect(&seg)
        };
        match verdict {
            Verdict::Reject => {
                stats.rejected += 1;
                h = h_try * 0.25;
                last_rejected = true;
                continue;
            }
            Verdict::LandAt(ts) if !forced && ts > t && ts < target => {
                stats.rejected += 1;
                landing = Some(ts);
                h = ts - t;
                continue;
            }
            _ => {}
        }

        {
            let seg = Segment { t0: t, t1: target, y0: &y, f0: &f, y1: &ws.y1, f1: &ws.k[6], dense: Some(&ws.dense) };
            on_segment(&seg);
        }
        stats.accepted += 1;
        if verdict == Verdict::Halt {
            return Err((DriverError::Halted { t: target }, stats));
        }
        t = target;
        y.copy_from_slice(&ws.y1);
        f.copy_from_slice(&ws.k[6]);
        if sys.after_step(t, &mut y) {
            sys.rhs(t, &y, &mut f);
            stats.rhs_evals += 1;
        }

        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        let grow = if last_rejected { grow.min(1.0) } else { grow };
        last_rejected = false;
        h = (h_try * grow).max(cfg.h_min);
    }
    Ok(stats)
}

/// Integrates over a prescribed mesh of step times without error control.
/// `mesh[0]` must be 0. Used to replay the steps of another run.
pub fn integrate_on_mesh<S: OdeSystem + ?Sized>(
    sys: &mut S,
    y0: &[f64],
    mesh: &[f64],
    on_segment: &mut dyn FnMut(&Segment<'_>),
) -> Result<Stats, (DriverError, Stats)> {
    let n = sys.dim();
    let cfg = DriverConfig { rtol: 1.0, atol: 1.0, ..DriverConfig::default() };
    let mut stats = Stats::default();
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    sys.after_step(mesh.first().copied().unwrap_or(0.0), &mut y);
    sys.rhs(0.0, &y, &mut f);
    for w in mesh.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        ws.k[0].copy_from_slice(&f);
        let err = dp_step(&*sys, t0, &y, t1 - t0, &cfg, &mut ws);
        stats.rhs_evals += 6;
        if err.is_nan() {
            return Err((DriverError::NonFinite { t: t0 }, stats));
        }
        {
            let seg = Segment { t0, t1, y0: &y, f0: &f, y1: &ws.y1, f1: &ws.k[6], dense: Some(&ws.dense) };
            on_segment(&seg);
        }
        stats.accepted += 1;
        y.copy_from_slice(&ws.y1);
        f.copy_from_slice(&ws.k[6]);
        if sys.after_step(t1, &mut y) {
            sys.rhs(t1, &y, &mut f);
        }
    }
    Ok(stats)
}
