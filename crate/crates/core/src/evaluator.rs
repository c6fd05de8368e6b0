//! Cost accounting for arbitrary offload plans, and the four placement policies
//! expressed as plan constructors.
//!
//! [`evaluate`] is the single source of truth for what a plan costs. Solvers
//! and policies may carry their own closed-form cost, but every test checks
//! it against this module.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::Instance;
use crate::selection::{self, SelectionError};
use crate::solver::{self, SolverError};

/// Tolerance on `x0 + sum(x_i) = 1`.
pub const FRACTION_SUM_TOL: f64 = 1e-9;
/// Tolerance on schedule cycles versus `B0 * x0`.
pub const CYCLE_TOL: f64 = 1e-6;
/// Relative slack for deadline and frequency checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// `x0` below `1 - TAIL_TOL` uploads something and pays the tail energy.
pub const TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub cycles: f64,
    pub frequency: f64,
}

/// Piecewise-constant local CPU frequency: `cycles` cycles run at `frequency`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FrequencySchedule {
    pub segments: Vec<Segment>,
}

impl FrequencySchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    /// All `cycles` at one frequency; empty when there is nothing to run.
    pub fn uniform(cycles: f64, frequency: f64) -> Self {
        if cycles > 0.0 {
            FrequencySchedule {
                segments: vec![Segment { cycles, frequency }],
            }
        } else {
            Self::empty()
        }
    }

    pub fn total_cycles(&self) -> f64 {
        self.segments.iter().map(|s| s.cycles).sum()
    }

    /// Local execution time, `sum(1/f_w)` over cycles.
    pub fn delay(&self) -> f64 {
        self.segments.iter().map(|s| s.cycles / s.frequency).sum()
    }

    /// Local execution energy, `kappa * sum(f_w^2)` over cycles.
    pub fn energy(&self, kappa: f64) -> f64 {
        kappa
            * self
                .segments
                .iter()
                .map(|s| s.cycles * s.frequency * s.frequency)
                .sum::<f64>()
    }

    pub fn max_frequency(&self) -> Option<f64> {
        self.segments.iter().map(|s| s.frequency).reduce(f64::max)
    }

    /// The frequency when the schedule has exactly one segment.
    pub fn uniform_frequency(&self) -> Option<f64> {
        match self.segments.as_slice() {
            [s] => Some(s.frequency),
            _ => None,
        }
    }
}

/// Decision variables: the locally processed fraction, per-server fractions
/// keyed by fleet index, and the local frequency schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OffloadPlan {
    pub x0: f64,
    pub allocations: BTreeMap<usize, f64>,
    pub schedule: FrequencySchedule,
}

impl OffloadPlan {
    pub fn local_only(schedule: FrequencySchedule) -> Self {
        OffloadPlan {
            x0: 1.0,
            allocations: BTreeMap::new(),
            schedule,
        }
    }

    pub fn servers_used(&self) -> usize {
        self.allocations.values().filter(|&&x| x > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DeadlineExceeded { delay: f64, deadline: f64 },
    TooManyServers { used: usize, m: usize },
    FrequencyAboveMax { frequency: f64, f_max: f64 },
}

/// Delays of the subtask sent to one server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubtaskDelay {
    pub server: usize,
    pub fraction: f64,
    /// Access point to server transfer.
    pub d_ps: f64,
    /// Processing on the server.
    pub d_sc: f64,
    /// End to end: uplink + transfer + processing.
    pub r: f64,
}

/// End-to-end delay of the chunk `fraction` on server `server`, given that
/// `1 - x0` of the task is uploaded.
pub fn subtask_delay(instance: &Instance, server: usize, x0: f64, fraction: f64) -> SubtaskDelay {
    let l = instance.task.bits();
    let s = &instance.servers[server];
    let d_lp = (1.0 - x0) * l / instance.device.r_hp;
    let d_ps = fraction * l / s.rate;
    let d_sc = instance.task.gamma_a * fraction * l / s.capability;
    SubtaskDelay {
        server,
        fraction,
        d_ps,
        d_sc,
        r: d_lp + d_ps + d_sc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub e_local: f64,
    /// Uplink energy including the tail when anything is uploaded.
    pub e_uplink: f64,
    pub d_local: f64,
    pub d_uplink: f64,
    pub subtasks: Vec<SubtaskDelay>,
    /// Slowest subtask; zero when nothing is offloaded.
    pub r_max: f64,
    /// `max(d_local, r_max)`.
    pub delay: f64,
    /// Device energy, `e_local + e_uplink`.
    pub energy: f64,
    pub objective: f64,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

fn malformed(msg: impl Into<String>) -> EvalError {
    EvalError::MalformedPlan(msg.into())
}

fn check_structure(instance: &Instance, plan: &OffloadPlan, b0: f64) -> Result<(), EvalError> {
    if !(0.0..=1.0).contains(&plan.x0) {
        return Err(malformed(format!("x0 = {} outside [0, 1]", plan.x0)));
    }
    let mut total = plan.x0;
    for (&i, &x) in &plan.allocations {
        if i >= instance.servers.len() {
            return Err(malformed(format!("unknown server index {i}")));
        }
        if !(x.is_finite() && x >= 0.0) {
            return Err(malformed(format!("fraction {x} for server {i}")));
        }
        total += x;
    }
    if (total - 1.0).abs() > FRACTION_SUM_TOL {
        return Err(malformed(format!("fractions sum to {total}, not 1")));
    }
    for s in &plan.schedule.segments {
        if !(s.frequency.is_finite() && s.frequency > 0.0) {
            return Err(malformed(format!(
                "frequency {} must be positive",
                s.frequency
            )));
        }
        if !(s.cycles.is_finite() && s.cycles >= 0.0) {
            return Err(malformed(format!("segment cycle count {}", s.cycles)));
        }
    }
    let want = b0 * plan.x0;
    let have = plan.schedule.total_cycles();
    if (have - want).abs() > CYCLE_TOL * want.max(1.0) {
        return Err(malformed(format!(
            "schedule covers {have} cycles, local share needs {want}"
        )));
    }
    Ok(())
}

/// Every delay and energy term of a plan plus the weighted objective.
pub fn evaluate(instance: &Instance, plan: &OffloadPlan) -> Result<CostBreakdown, EvalError> {
    let l = instance.task.bits();
    let b0 = instance.task.gamma_a * l;
    let dev = &instance.device;
    check_structure(instance, plan, b0)?;

    let d_local = plan.schedule.delay();
    let e_local = plan.schedule.energy(dev.kappa);

    let uploaded = 1.0 - plan.x0;
    let d_uplink = uploaded * l / dev.r_hp;
    let tail = if plan.x0 < 1.0 - TAIL_TOL {
        dev.e_tail
    } else {
        0.0
    };
    let e_uplink = dev.p_tx * uploaded * l / dev.r_hp + tail;

    let subtasks: Vec<SubtaskDelay> = plan
        .allocations
        .iter()
        .filter(|(_, &x)| x > 0.0)
        .map(|(&i, &x)| subtask_delay(instance, i, plan.x0, x))
        .collect();
    let r_max = subtasks.iter().map(|s| s.r).fold(0.0, f64::max);

    let delay = d_local.max(r_max);
    let energy = e_local + e_uplink;
    let objective = energy + instance.alpha * delay;

    let mut violations = Vec::new();
    let deadline = instance.task.deadline();
    if delay > deadline * (1.0 + FEASIBILITY_TOL) {
        violations.push(Violation::DeadlineExceeded { delay, deadline });
    }
    let used = plan.servers_used();
    if used > instance.m {
        violations.push(Violation::TooManyServers {
            used,
            m: instance.m,
        });
    }
    if let Some(f) = plan.schedule.max_frequency() {
        if f > dev.f_max * (1.0 + FEASIBILITY_TOL) {
            violations.push(Violation::FrequencyAboveMax {
                frequency: f,
                f_max: dev.f_max,
            });
        }
    }

    Ok(CostBreakdown {
        e_local,
        e_uplink,
        d_local,
        d_uplink,
        subtasks,
        r_max,
        delay,
        energy,
        objective,
        feasible: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("policy needs at least one server")]
    NoServers,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl From<SelectionError> for PolicyError {
    fn from(e: SelectionError) -> Self {
        PolicyError::Solver(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Tos,
    Local,
    Mec,
    Mixed,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Tos, Policy::Local, Policy::Mec, Policy::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Tos => "tos",
            Policy::Local => "local",
            Policy::Mec => "mec",
            Policy::Mixed => "mixed",
        }
    }

    pub fn plan(self, instance: &Instance) -> Result<OffloadPlan, PolicyError> {
        match self {
            Policy::Tos => policy_tos(instance),
            Policy::Local => policy_local(instance),
            Policy::Mec => policy_mec(instance),
            Policy::Mixed => policy_mixed(instance),
        }
    }
}

/// Whole task on the device at the cheapest deadline-feasible uniform frequency.
pub fn policy_local(instance: &Instance) -> Result<OffloadPlan, PolicyError> {
    let b0 = instance.task.gamma_a * instance.task.bits();
    let local = solver::opt_local(
        b0,
        instance.alpha,
        &instance.device,
        instance.task.deadline(),
    )?;
    Ok(OffloadPlan::local_only(FrequencySchedule::uniform(
        b0,
        local.frequency,
    )))
}

/// Equalizing split of `1 - x0` over the `m` fastest servers.
fn equalized(instance: &Instance, x0: f64) -> Result<(OffloadPlan, f64), PolicyError> {
    if instance.servers.is_empty() || instance.m == 0 {
        return Err(PolicyError::NoServers);
    }
    let params = instance.derive_params();
    let ranking = selection::rank_top(&params.q, instance.m)?;
    let chosen = ranking.prefix(instance.m);
    let q_sub = ranking.q_prefix(instance.m);
    let agg = selection::subset_aggregates(params.q0, q_sub)?;
    let rest = 1.0 - x0;
    let allocations = chosen
        .iter()
        .zip(q_sub)
        .map(|(&i, &q)| (i, rest / (agg.q_sum_inv * q)))
        .collect();
    let plan = OffloadPlan {
        x0,
        allocations,
        schedule: FrequencySchedule::empty(),
    };
    Ok((plan, rest * agg.qbar))
}

/// Whole task offloaded, split to equalize the per-server delays.
pub fn policy_mec(instance: &Instance) -> Result<OffloadPlan, PolicyError> {
    Ok(equalized(instance, 0.0)?.0)
}

/// Fixed local share `1/(1+m)`; the device runs at the uniform frequency that
/// finishes together with the servers, capped at `f_max`.
pub fn policy_mixed(instance: &Instance) -> Result<OffloadPlan, PolicyError> {
    let x0 = 1.0 / (1.0 + instance.m as f64);
    let (mut plan, r_max) = equalized(instance, x0)?;
    let cycles = instance.task.gamma_a * instance.task.bits() * x0;
    let f = (cycles / r_max).min(instance.device.f_max);
    plan.schedule = FrequencySchedule::uniform(cycles, f);
    Ok(plan)
}

pub fn policy_tos(instance: &Instance) -> Result<OffloadPlan, PolicyError> {
    Ok(solver::solve_p0(instance)?.plan)
}
