use std::fmt::Write as _;

use anyhow::bail;
use log::info;
use orbitflow::integrate_with;
use orbitflow::oracle::{comparison_grid, eigenflow};
use orbitflow::reduction::reduce;
use serde::Serialize;

use crate::output::emit;
use crate::simulate::{initial_pair, options, REDUCE_TOL};
use crate::{Format, ModelChoice, NumericFailure, RunSettings};

#[derive(Debug, Serialize)]
struct Report {
    model: String,
    n: usize,
    seed: Option<u64>,
    t_end: f64,
    tol: f64,
    sign_convention: String,
    grid_points: usize,
    /// Max |a_i(t) - λ_i(t)| per eigenvalue channel.
    channel_deviation: Vec<f64>,
    max_deviation: f64,
    threshold: f64,
    passed: bool,
}

pub fn run(s: &RunSettings) -> anyhow::Result<()> {
    if s.model == Some(ModelChoice::PolarFile) {
        bail!("compare-oracle needs a matrix model (hermitian or symmetric)");
    }
    let (model, x, seed) = initial_pair(s)?;
    let (s0, _) = reduce(&x, model, REDUCE_TOL)?;
    // Uniform samples plus the accepted step times of a probe run.
    let probe = match integrate_with(&s0, model, s.t_end, &options(s, vec![0.0]))? {
        Ok(t) => t,
        Err(e) => return Err(NumericFailure(e.to_string()).into()),
    };
    let grid = comparison_grid(s.t_end, s.samples, &probe.step_times());
    let traj = match integrate_with(&s0, model, s.t_end, &options(s, grid.clone()))? {
        Ok(t) => t,
        Err(e) => return Err(NumericFailure(e.to_string()).into()),
    };
    let truth = eigenflow(&x.a, &x.alpha, model, &grid)?;
    let mut channel = vec![0.0_f64; model.n];
    for (k, sample) in traj.samples.iter().enumerate() {
        for (i, dev) in channel.iter_mut().enumerate() {
            *dev = dev.max((sample.state.a[i] - truth[(k, i)]).abs());
        }
    }
    let max_deviation = channel.iter().copied().fold(0.0, f64::max);
    let passed = max_deviation < s.threshold;
    info!("oracle comparison on {} grid points: max deviation {max_deviation:.3e}", grid.len());
    let report = Report {
        model: model.kind.to_string(),
        n: model.n,
        seed,
        t_end: s.t_end,
        tol: s.tol,
        sign_convention: s.convention.describe().to_string(),
        grid_points: grid.len(),
        channel_deviation: channel,
        max_deviation,
        threshold: s.threshold,
        passed,
    };
    let text = match s.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut out = String::new();
            writeln!(out, "# model: {} n={}", report.model, report.n)?;
            writeln!(out, "# sign_convention: {}", report.sign_convention)?;
            writeln!(out, "# grid_points: {}", report.grid_points)?;
            out.push_str("channel,max_deviation\n");
            for (i, d) in report.channel_deviation.iter().enumerate() {
                writeln!(out, "a_{},{d:e}", i + 1)?;
            }
            writeln!(out, "# max deviation {max_deviation:e}, threshold {:e}: {}", s.threshold, if passed { "PASS" } else { "FAIL" })?;
            out
        }
    };
    emit(s.out.as_deref(), &text)?;
    if !passed {
        return Err(NumericFailure(format!(
            "max deviation {max_deviation:.3e} exceeds threshold {:.3e}",
            s.threshold
        ))
        .into());
    }
    Ok(())
}
