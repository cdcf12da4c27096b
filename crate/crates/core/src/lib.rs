//! Riemannian geometry of orbit spaces `V/G` for polar representations.
//!
//! The two matrix models (`SU(n)` acting on Hermitian matrices and `SO(n)`
//! acting on real symmetric matrices) are handled concretely; general polar
//! representations enter through explicit restricted-root data in [`polar`].
//!
//! * [`orbit_metric`]: chamber coordinates, quotient distance, minimal
//!   segments, isotropy strata.
//! * [`reduction`]: momentum map `J(A, α) = [A, α]`, gauge fixing into
//!   chamber coordinates and reconstruction.
//! * [`dynamics`]: the reduced (spin) Calogero-Moser flow, its invariants,
//!   adaptive integration with wall events and the variational flow.
//! * [`polar`]: restricted root systems, the reduced equations on a section
//!   and Weyl-chamber billiards.
//! * [`oracle`]: brute-force eigenvalue flows of `A + tα` and closed forms.

// `!(x > 0.0)` also rejects NaN; tableau loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod orbit_metric;
pub mod polar;
pub mod reduction;
pub mod sampling;

pub use dynamics::{
    casimirs, classical_cm_field, hamiltonian_reduced, integrate, integrate_with, variational_flow,
    vector_field, Diagnostics, Event, EventKind, IntegrateOptions, IntegrationError,
    ReducedDerivative, SignConvention, Trajectory, TrajectorySample,
};
pub use error::{Error, Result};
pub use linalg::CMatrix;
pub use model::{MatrixModel, ModelKind};
pub use orbit_metric::{ChamberPoint, MinimalSegment};
pub use polar::{PolarReducedState, RestrictedRootSystem};
pub use reduction::{CotangentPoint, GaugeFrame, ReducedState};
