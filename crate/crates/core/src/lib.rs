//! Optimal partial offloading of a computation task from a mobile device to a
//! bounded subset of edge servers, jointly with the device's CPU frequency.
//!
//! The objective is device energy plus `alpha` times the overall completion
//! delay. [`solver::solve_p0`] returns the exact optimum in `O(N log N)`;
//! [`oracle`] holds brute-force checks that are independent of it, and
//! [`experiments`] regenerates the policy comparison study.

pub mod cli;
pub mod evaluator;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod selection;
pub mod solver;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use evaluator::{evaluate, CostBreakdown, FrequencySchedule, OffloadPlan, Policy};
pub use model::{DerivedParams, DeviceSpec, Instance, ServerSpec, TaskSpec};
pub use solver::{solve_p0, P0Solution};
