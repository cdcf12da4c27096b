use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, CMatrix};

/// Relative threshold above which an input matrix is rejected as not
/// Hermitian (or not real symmetric).
pub const SYMMETRY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `SU(n)` acting on `H(n)` by conjugation.
    Hermitian,
    /// `SO(n)` acting on `S(n)` by conjugation.
    Symmetric,
}

impl ModelKind {
    pub fn is_real(self) -> bool {
        matches!(self, ModelKind::Symmetric)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hermitian => "hermitian",
            ModelKind::Symmetric => "symmetric",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hermitian" | "h" => Ok(ModelKind::Hermitian),
            "symmetric" | "real_symmetric" | "s" => Ok(ModelKind::Symmetric),
            other => Err(Error::input(format!("unknown matrix model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixModel {
    pub kind: ModelKind,
    pub n: usize,
}

impl MatrixModel {
    pub fn new(kind: ModelKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("matrix dimension must be at least 1"));
        }
        Ok(MatrixModel { kind, n })
    }

    pub fn hermitian(n: usize) -> Self {
        MatrixModel::new(ModelKind::Hermitian, n).expect("n >= 1")
    }

    pub fn symmetric(n: usize) -> Self {
        MatrixModel::new(ModelKind::Symmetric, n).expect("n >= 1")
    }

    pub fn is_real(&self) -> bool {
        self.kind.is_real()
    }

    /// Checks that `m` lies in the representation space of this model.
    pub fn validate(&self, m: &CMatrix) -> Result<()> {
        check_dim(self.n, m.nrows())?;
        check_dim(self.n, m.ncols())?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::input("matrix has non-finite entries"));
        }
        let scale = linalg::max_abs(m).max(1.0);
        let defect = linalg::hermitian_defect(m);
        if defect > SYMMETRY_THRESHOLD * scale {
            return Err(Error::input(format!(
                "matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        if self.is_real() && linalg::max_imag(m) > SYMMETRY_THRESHOLD * scale {
            return Err(Error::input("symmetric model requires a real matrix"));
        }
        Ok(())
    }
}
