//! Configuration-driven batch runner for thermolab experiments.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{parse_scenario, ConfigError, Emit, RunKind, ScenarioConfig};
pub use run::{run, RunError, RunReport, RunSettings};
