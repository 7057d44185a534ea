//! Scenario files, the simulation loop, metrics and benchmarks built on
//! `cond-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod oracle;
pub mod report;
pub mod run;
pub mod scenario;
pub mod verify;

pub use error::SimError;
pub use run::{run, MetricsRow, RunConfig, RunResult, SolverKind};
pub use scenario::{load_scenario, Scenario, Scene};
