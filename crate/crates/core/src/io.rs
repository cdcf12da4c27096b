//! Text formats: matrix fixtures and trajectory output (CSV and JSON).
//!
//! Matrix files are plain text. The first non-comment line holds `n` and the
//! kind (`hermitian` or `symmetric`), followed by `n` rows of
//! whitespace-separated entries. Complex entries are written `re+imi`,
//! e.g. `0.5-2i`; a bare real number is also accepted. Lines starting with
//! `#` are ignored.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Event, SignConvention, Trajectory, TrajectorySample};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{MatrixModel, ModelKind};
use crate::polar::{polar_casimirs, PolarSample, PolarTrajectory, RestrictedRootSystem};

/// Parses a complex number `a`, `bi`, `a+bi`, `a-bi` (also `j`).
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(Complex64::new(v, 0.0));
    }
    let body = s.strip_suffix('i').or_else(|| s.strip_suffix('j'))?;
    // Split at the last sign that is not part of an exponent.
    let bytes = body.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        if (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E') {
            split = Some(k);
            break;
        }
    }
    let (re, im) = match split {
        Some(k) => (body[..k].parse::<f64>().ok()?, imag_part(&body[k..])?),
        None => (0.0, imag_part(body)?),
    };
    Some(Complex64::new(re, im))
}

fn imag_part(s: &str) -> Option<f64> {
    match s {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => s.parse().ok(),
    }
}

pub fn format_complex(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im.is_sign_negative() {
        format!("{}{}i", z.re, z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// Parses and validates a matrix file.
pub fn parse_matrix(text: &str) -> Result<(MatrixModel, CMatrix)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty matrix file"))?;
    let mut parts = header.split_whitespace();
    let n: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(hline, "expected dimension n"))?;
    let kind: ModelKind = parts
        .next()
        .ok_or_else(|| Error::parse(hline, "expected matrix kind"))?
        .parse()
        .map_err(|_| Error::parse(hline, "kind must be 'hermitian' or 'symmetric'"))?;
    if parts.next().is_some() {
        return Err(Error::parse(hline, "trailing tokens after kind"));
    }
    let model = MatrixModel::new(kind, n)?;
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        let (line, row) = lines.next().ok_or_else(|| Error::parse(hline + i + 1, format!("missing row {}", i + 1)))?;
        let entries: Vec<&str> = row.split_whitespace().collect();
        if entries.len() != n {
            return Err(Error::parse(line, format!("expected {n} entries, found {}", entries.len())));
        }
        for (j, e) in entries.iter().enumerate() {
            m[(i, j)] = parse_complex(e).ok_or_else(|| Error::parse(line, format!("bad entry '{e}'")))?;
        }
    }
    if let Some((line, _)) = lines.next() {
        return Err(Error::parse(line, "unexpected extra rows"));
    }
    model.validate(&m)?;
    Ok((model, m))
}

pub fn format_matrix(model: MatrixModel, m: &CMatrix) -> String {
    let mut out = format!("{} {}\n", model.n, model.kind);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: impl AsRef<std::path::Path>) -> Result<(MatrixModel, CMatrix)> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Provenance of a run, written as the header of output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model: ModelKind,
    pub n: usize,
    pub seed: Option<u64>,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub gap_floor: f64,
    pub sign_convention: SignConvention,
    pub sign_convention_formula: String,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub energy: f64,
    /// Absent for `n = 1`.
    pub min_gap: Option<f64>,
    pub casimirs: Vec<f64>,
    /// `(i, j, Re Y_ij, Im Y_ij)` for `i < j` (1-based); the lower triangle
    /// follows from skew-Hermiticity.
    pub spin: Vec<(usize, usize, f64, f64)>,
}

impl SampleRecord {
    pub fn from_sample(s: &TrajectorySample) -> Self {
        let n = s.state.dim();
        let mut spin = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let z = s.state.y[(i, j)];
                spin.push((i + 1, j + 1, z.re, z.im));
            }
        }
        SampleRecord {
            t: s.t,
            a: s.state.a.clone(),
            p: s.state.p.clone(),
            energy: s.diagnostics.energy,
            min_gap: s.diagnostics.min_gap.is_finite().then_some(s.diagnostics.min_gap),
            casimirs: s.diagnostics.casimirs.clone(),
            spin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub metadata: RunMetadata,
    pub samples: Vec<SampleRecord>,
    pub events: Vec<Event>,
}

impl TrajectoryFile {
    pub fn new(metadata: RunMetadata, traj: &Trajectory) -> Self {
        TrajectoryFile {
            metadata,
            samples: traj.samples.iter().map(SampleRecord::from_sample).collect(),
            events: traj.events.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))
    }

    /// CSV with `#`-prefixed metadata lines followed by the header
    /// `t,a_1..a_n,p_1..p_n,energy,min_gap,casimir_1..casimir_3`.
    pub fn to_csv(&self) -> String {
        let m = &self.metadata;
        let meta = [
            ("model", m.model.to_string()),
            ("n", m.n.to_string()),
            ("seed", m.seed.map_or_else(|| "none".to_string(), |s| s.to_string())),
            ("t_end", m.t_end.to_string()),
            ("rtol", format!("{:e}", m.rtol)),
            ("atol", format!("{:e}", m.atol)),
            ("gap_floor", format!("{:e}", m.gap_floor)),
            ("sign_convention", m.sign_convention_formula.clone()),
            ("steps", format!("{} accepted, {} rejected", m.accepted_steps, m.rejected_steps)),
            ("status", m.status.clone()),
            ("events", self.events.len().to_string()),
        ];
        let rows = self.samples.iter().map(|s| CsvRow { t: s.t, a: &s.a, p: &s.p, energy: s.energy, min_gap: s.min_gap, casimirs: &s.casimirs });
        write_csv(&meta, m.n, rows)
    }
}

struct CsvRow<'a> {
    t: f64,
    a: &'a [f64],
    p: &'a [f64],
    energy: f64,
    min_gap: Option<f64>,
    casimirs: &'a [f64],
}

fn write_csv<'a>(meta: &[(&str, String)], n: usize, rows: impl Iterator<Item = CsvRow<'a>>) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("a_{i}")));
    header.extend((1..=n).map(|i| format!("p_{i}")));
    header.extend(["energy", "min_gap", "casimir_1", "casimir_2", "casimir_3"].map(String::from));
    out.push_str(&header.join(","));
    out.push('\n');
    for s in rows {
        let mut row = vec![s.t.to_string()];
        row.extend(s.a.iter().map(f64::to_string));
        row.extend(s.p.iter().map(f64::to_string));
        row.push(s.energy.to_string());
        row.push(s.min_gap.map_or_else(|| "inf".to_string(), |g| g.to_string()));
        row.extend((0..3).map(|k| s.casimirs.get(k).map_or_else(String::new, f64::to_string)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Header of a run on user-supplied root data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarRunMetadata {
    pub root_file: String,
    pub section_dim: usize,
    pub seed: Option<u64>,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub gap_floor: f64,
    pub sign_convention: SignConvention,
    pub sign_convention_formula: String,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarSampleRecord {
    pub t: f64,
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub energy: f64,
    /// Smallest `λ(a)` over positive roots; absent without roots.
    pub min_gap: Option<f64>,
    pub casimirs: Vec<f64>,
    /// Spin components per positive root, in root order.
    pub spin: Vec<Vec<f64>>,
}

impl PolarSampleRecord {
    pub fn from_sample(s: &PolarSample, rs: &RestrictedRootSystem) -> Self {
        let min_gap = rs.roots().iter().map(|r| r.eval(&s.state.a0)).min_by(f64::total_cmp);
        PolarSampleRecord {
            t: s.t,
            a: s.state.a0.clone(),
            p: s.state.p0.clone(),
            energy: s.energy,
            min_gap,
            casimirs: polar_casimirs(&s.state, rs, 3),
            spin: s.state.y.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarTrajectoryFile {
    pub metadata: PolarRunMetadata,
    /// Indices of roots vanishing at `t = 0`.
    pub frozen_roots: Vec<usize>,
    pub samples: Vec<PolarSampleRecord>,
}

impl PolarTrajectoryFile {
    pub fn new(metadata: PolarRunMetadata, traj: &PolarTrajectory, rs: &RestrictedRootSystem) -> Self {
        PolarTrajectoryFile {
            metadata,
            frozen_roots: traj.frozen_roots.clone(),
            samples: traj.samples.iter().map(|s| PolarSampleRecord::from_sample(s, rs)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))
    }

    /// Same columns as [`TrajectoryFile::to_csv`], with `n` the section
    /// dimension.
    pub fn to_csv(&self) -> String {
        let m = &self.metadata;
        let meta = [
            ("model", "polar-file".to_string()),
            ("root_file", m.root_file.clone()),
            ("n", m.section_dim.to_string()),
            ("seed", m.seed.map_or_else(|| "none".to_string(), |s| s.to_string())),
            ("t_end", m.t_end.to_string()),
            ("rtol", format!("{:e}", m.rtol)),
            ("atol", format!("{:e}", m.atol)),
            ("gap_floor", format!("{:e}", m.gap_floor)),
            ("sign_convention", m.sign_convention_formula.clone()),
            ("steps", format!("{} accepted, {} rejected", m.accepted_steps, m.rejected_steps)),
            ("status", m.status.clone()),
        ];
        let rows = self.samples.iter().map(|s| CsvRow { t: s.t, a: &s.a, p: &s.p, energy: s.energy, min_gap: s.min_gap, casimirs: &s.casimirs });
        write_csv(&meta, m.section_dim, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn complex_parsing() {
        assert_eq!(parse_complex("1.5"), Some(c(1.5, 0.0)));
        assert_eq!(parse_complex("1+2i"), Some(c(1.0, 2.0)));
        assert_eq!(parse_complex("-1-2i"), Some(c(-1.0, -2.0)));
        assert_eq!(parse_complex("1e-3+2e+1i"), Some(c(1e-3, 20.0)));
        assert_eq!(parse_complex("-i"), Some(c(0.0, -1.0)));
        assert_eq!(parse_complex("3.5j"), Some(c(0.0, 3.5)));
        assert_eq!(parse_complex("abc"), None);
        for z in [c(0.25, -3.0), c(-1e-20, 4.0), c(2.0, 0.0)] {
            assert_eq!(parse_complex(&format_complex(z)), Some(z));
        }
    }

    #[test]
    fn matrix_round_trip() {
        let text = "# fixture\n2 hermitian\n1 0.5+2i\n0.5-2i -3\n";
        let (model, m) = parse_matrix(text).unwrap();
        assert_eq!(model, MatrixModel::hermitian(2));
        assert_eq!(m[(0, 1)], c(0.5, 2.0));
        assert_eq!(parse_matrix(&format_matrix(model, &m)).unwrap().1, m);
    }

    #[test]
    fn matrix_errors() {
        assert!(matches!(parse_matrix(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_matrix("2 blob\n1 0\n0 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_matrix("2 symmetric\n1 0\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_matrix("2 symmetric\n1 x\n0 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_matrix("2 symmetric\n1 2\n0 1\n").is_err());
        assert!(parse_matrix("2 symmetric\n1 1i\n-1i 1\n").is_err());
    }
}
