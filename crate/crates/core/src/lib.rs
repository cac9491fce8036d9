//! Gaussian thermostats on torus charts: the flow, its conformally symplectic
//! transverse cocycle, and the linear algebra of conformally symplectic
//! periodic systems.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the tensor notation.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod cocycle;
pub mod cs;
pub mod flow;
pub mod geometry;
pub mod numerics;

pub use cs::{CsError, CsMatrix};
pub use flow::{FlowError, OrbitOptions, OrbitSegment, UnitTangentState};
pub use geometry::{ChartPoint, ClosedFormField, ConformalMetric, Scenario, TrigPoly, TrigTerm};
