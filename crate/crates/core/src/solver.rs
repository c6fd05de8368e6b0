//! Closed-form optimum of the offloading problem.
//!
//! For a fixed server subset the whole optimum is a function of the subset's
//! effective delay constant `Qbar`: the local share is `x0 = y / (1 + y)` where
//! `y` is the non-negative root of `2y^3 + 3y^2 = (phi + alpha*Qbar) * Qbar^2 / K`,
//! the remote share is split so every server finishes at the same instant, and
//! the device runs at the single frequency that finishes together with them.
//! Across subsets, smaller `Qbar` is strictly better, so the `m` servers with
//! the smallest `q` are optimal. [`solve_p0`] then compares the offload optimum
//! with running everything locally.

use thiserror::Error;

use crate::evaluator::{FrequencySchedule, OffloadPlan};
use crate::model::{DerivedParams, DeviceSpec, Instance, ValidationError};
use crate::selection::{self, SelectionError, SubsetAggregates};

/// Relative slack when checking a closed-form plan against `f_max` and `tau_d`.
const PLAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("cubic right-hand side {0} is negative or not finite")]
    NegativeRhs(f64),
    #[error(
        "local execution needs {required_hz} Hz to meet the deadline, above f_max = {f_max} Hz"
    )]
    DeadlineInfeasibleLocally { required_hz: f64, f_max: f64 },
    #[error("no branch meets the deadline or frequency limit")]
    DeadlineInfeasible,
    #[error("h1 and h2 have a pole at x = 1")]
    PoleAtOne,
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("subset has {given} q values but aggregates describe {expected}")]
    SubsetMismatch { given: usize, expected: usize },
    #[error("invalid instance: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<ValidationError>),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// Energy-optimal uniform local frequency when delay is weighted by `alpha`.
pub fn fbar(alpha: f64, kappa: f64, f_max: f64) -> f64 {
    let target = alpha / (2.0 * kappa);
    let mut f = target.cbrt();
    // One Newton polish; cbrt can be an ulp off.
    if f > 0.0 && f.is_finite() {
        f -= (f * f * f - target) / (3.0 * f * f);
    }
    f.min(f_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSolution {
    pub frequency: f64,
    pub cost: f64,
    pub delay: f64,
    pub energy: f64,
}

/// Cheapest way to run all `b0` cycles on the device.
///
/// The unconstrained optimum is [`fbar`]; when that misses the deadline the
/// frequency is raised to `b0 / tau_d`, the cheapest deadline-feasible uniform
/// frequency since the cost is convex in `f` beyond `fbar`.
pub fn opt_local(
    b0: f64,
    alpha: f64,
    device: &DeviceSpec,
    tau_d: f64,
) -> Result<LocalSolution, SolverError> {
    let required = b0 / tau_d;
    if required > device.f_max * (1.0 + PLAN_TOL) {
        return Err(SolverError::DeadlineInfeasibleLocally {
            required_hz: required,
            f_max: device.f_max,
        });
    }
    let frequency = fbar(alpha, device.kappa, device.f_max)
        .max(required)
        .min(device.f_max);
    let energy = b0 * device.kappa * frequency * frequency;
    let delay = b0 / frequency;
    Ok(LocalSolution {
        frequency,
        cost: energy + alpha * delay,
        delay,
        energy,
    })
}

/// Unique non-negative root of `2y^3 + 3y^2 = c`.
///
/// Newton from an upper bound; the cubic is convex and increasing on
/// `y >= 0`, so iterates descend monotonically onto the root. A bisection
/// step replaces any iterate that leaves the bracket.
pub fn solve_cubic(c: f64) -> Result<f64, SolverError> {
    if !c.is_finite() || c < 0.0 {
        return Err(SolverError::NegativeRhs(c));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = (c / 3.0).sqrt().min((c / 2.0).cbrt());
    let mut y = hi;
    for _ in 0..200 {
        let g = y * y * (2.0 * y + 3.0) - c;
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let dg = 6.0 * y * (y + 1.0);
        let mut next = y - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 2.0 * f64::EPSILON * y || hi - lo <= 2.0 * f64::EPSILON * hi {
            y = next;
            break;
        }
        y = next;
    }
    Ok(y)
}

/// Offload optimum as a function of `Qbar` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbarOptimum {
    pub y: f64,
    pub x0: f64,
    /// `1 - x0`, computed as `1 / (1 + y)` to avoid cancellation.
    pub remote: f64,
    pub opt_value: f64,
    pub r_max: f64,
    /// Uniform local frequency normalized by `B0`, i.e. `y / Qbar`.
    pub xi: f64,
}

pub fn optimum_at_qbar(
    k: f64,
    phi: f64,
    alpha: f64,
    qbar: f64,
) -> Result<QbarOptimum, SolverError> {
    let y = solve_cubic((phi + alpha * qbar) * qbar * qbar / k)?;
    let remote = 1.0 / (1.0 + y);
    Ok(QbarOptimum {
        y,
        x0: y / (1.0 + y),
        remote,
        opt_value: 3.0 * k * y * y / (qbar * qbar) - phi,
        r_max: remote * qbar,
        xi: y / qbar,
    })
}

/// Optimum for a fixed server subset, with the offload constants dropped
/// (`phi` and the tail energy).
#[derive(Debug, Clone, PartialEq)]
pub struct P1Solution {
    pub x0_star: f64,
    pub y_star: f64,
    pub opt_value: f64,
    /// Overall delay `(1 - x0) * Qbar`.
    pub r_max: f64,
    pub f_local: f64,
    /// Fractions aligned with the subset's q values.
    pub allocations: Vec<f64>,
    /// Whether local execution energy exceeds the energy to upload the same
    /// share. Reported only; the solution is returned either way.
    pub assumption_holds: bool,
}

pub fn solve_p1(
    params: &DerivedParams,
    agg: &SubsetAggregates,
    q_subset: &[f64],
    alpha: f64,
) -> Result<P1Solution, SolverError> {
    if q_subset.len() != agg.n {
        return Err(SolverError::SubsetMismatch {
            given: q_subset.len(),
            expected: agg.n,
        });
    }
    let opt = optimum_at_qbar(params.k, params.phi, alpha, agg.qbar)?;
    let allocations = q_subset
        .iter()
        .map(|q| opt.remote / (agg.q_sum_inv * q))
        .collect();
    let f_local = params.b0 * opt.xi;
    let e_local = params.k * opt.x0.powi(3) / (opt.r_max * opt.r_max);
    Ok(P1Solution {
        x0_star: opt.x0,
        y_star: opt.y,
        opt_value: opt.opt_value,
        r_max: opt.r_max,
        f_local,
        allocations,
        assumption_holds: opt.x0 == 0.0 || e_local > params.phi * opt.x0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HRegion {
    /// `[0, Qbar/(R*+Qbar)]`, delay set by the equalized servers.
    Low,
    /// `[Qbar/(R*+Qbar), Qu/(R*+Qu)]`, delay at its free optimum `R* x`.
    Middle,
    /// `[Qu/(R*+Qu), 1]`, delay pinned at the worst-path bound.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValues {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub region: HRegion,
    /// `(2K/alpha)^(1/3)`.
    pub r_star: f64,
    pub lower_boundary: f64,
    pub upper_boundary: f64,
}

/// Objective minimized over the delay, as a function of the local share `x`.
pub fn h_values(
    x: f64,
    qbar: f64,
    qu: f64,
    k: f64,
    phi: f64,
    alpha: f64,
) -> Result<HValues, SolverError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(SolverError::InvalidFraction(x));
    }
    if x == 1.0 {
        return Err(SolverError::PoleAtOne);
    }
    let r_star = (2.0 * k / alpha).cbrt();
    let cubic_term = x * x * x / ((1.0 - x) * (1.0 - x));
    let h1 = k / (qbar * qbar) * cubic_term - phi * x + alpha * (1.0 - x) * qbar;
    let h2 = k / (qu * qu) * cubic_term - phi * x + alpha * (1.0 - x) * qu;
    let h3 = (k / (r_star * r_star) - phi + alpha * r_star) * x;
    let lower_boundary = qbar / (r_star + qbar);
    let upper_boundary = qu / (r_star + qu);
    let region = if x <= lower_boundary {
        HRegion::Low
    } else if x >= upper_boundary {
        HRegion::High
    } else {
        HRegion::Middle
    };
    Ok(HValues {
        h1,
        h2,
        h3,
        region,
        r_star,
        lower_boundary,
        upper_boundary,
    })
}

/// Upper limits on `Qbar` under which the closed form is provably optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityGates {
    /// Largest `Qbar` whose optimal delay meets the deadline; infinite when unbounded.
    pub qbar_star: f64,
    /// Largest `Qbar` whose optimal local frequency stays within `f_max`; infinite when unbounded.
    pub qbar_max: f64,
    /// `Q(m)` of the selected subset.
    pub q_m: f64,
    pub gate_ok: bool,
}

/// Optimal overall delay at a given `Qbar`.
fn delay_at(params: &DerivedParams, alpha: f64, qbar: f64) -> f64 {
    optimum_at_qbar(params.k, params.phi, alpha, qbar)
        .map(|o| o.r_max)
        .unwrap_or(f64::NAN)
}

/// Largest `Qbar` whose optimal delay is at most `tau_d`.
///
/// The optimal delay increases strictly with `Qbar` and tends to
/// `R* = (2K/alpha)^(1/3)`; deadlines at or above `R*` never bind.
pub fn qbar_for_deadline(params: &DerivedParams, alpha: f64, tau_d: f64) -> f64 {
    let r_star = (2.0 * params.k / alpha).cbrt();
    if !tau_d.is_finite() || tau_d >= r_star {
        return f64::INFINITY;
    }
    // delay <= Qbar, so the crossing is above tau_d.
    let mut lo = 0.0;
    let mut hi = tau_d;
    while delay_at(params, alpha, hi) < tau_d {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if delay_at(params, alpha, mid) < tau_d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn gates(
    params: &DerivedParams,
    device: &DeviceSpec,
    alpha: f64,
    tau_d: f64,
    q_m: f64,
) -> FeasibilityGates {
    let qbar_star = qbar_for_deadline(params, alpha, tau_d);
    let b0 = params.b0;
    let b0_cubed = b0 * b0 * b0;
    let f = device.f_max;
    let denom = alpha * b0_cubed - 2.0 * params.k * f * f * f;
    let qbar_max = if denom > 0.0 {
        (3.0 * params.k * f * f * b0 - params.phi * b0_cubed) / denom
    } else {
        f64::INFINITY
    };
    FeasibilityGates {
        qbar_star,
        qbar_max,
        q_m,
        gate_ok: q_m <= qbar_star && q_m <= qbar_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Local,
    Offload,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Local => "local",
            Branch::Offload => "offload",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P0Solution {
    pub branch: Branch,
    pub plan: OffloadPlan,
    /// Weighted energy plus delay of `plan`, in joules.
    pub opt_value: f64,
    /// `None` when the fleet is empty.
    pub gates: Option<FeasibilityGates>,
    pub optimality_certified: bool,
    /// Fleet indices of the `m` fastest servers, in rank order.
    pub selected: Vec<usize>,
    pub p1: Option<P1Solution>,
    pub local: Option<LocalSolution>,
}

fn local_solution(local: LocalSolution, b0: f64) -> OffloadPlan {
    OffloadPlan::local_only(FrequencySchedule::uniform(b0, local.frequency))
}

/// Ranks servers, solves the closed form on the `m` fastest, and keeps the
/// cheaper of that and running everything locally.
///
/// The result is certified optimal only when `Q(m)` clears both gates; an
/// uncertified closed-form plan is still returned if it meets the deadline and
/// frequency limit.
pub fn solve_p0(instance: &Instance) -> Result<P0Solution, SolverError> {
    instance.validate().map_err(SolverError::InvalidInstance)?;
    let params = instance.derive_params();
    let dev = &instance.device;
    let tau_d = instance.task.deadline();
    let local = opt_local(params.b0, instance.alpha, dev, tau_d).ok();

    if instance.servers.is_empty() {
        let local = local.ok_or(SolverError::DeadlineInfeasible)?;
        return Ok(P0Solution {
            branch: Branch::Local,
            plan: local_solution(local, params.b0),
            opt_value: local.cost,
            gates: None,
            optimality_certified: true,
            selected: Vec::new(),
            p1: None,
            local: Some(local),
        });
    }

    let ranking = selection::rank_top(&params.q, instance.m)?;
    let selected = ranking.prefix(instance.m).to_vec();
    let q_sub = ranking.q_prefix(instance.m);
    let agg = selection::subset_aggregates(params.q0, q_sub)?;
    let p1 = solve_p1(&params, &agg, q_sub, instance.alpha)?;
    let gates = gates(&params, dev, instance.alpha, tau_d, agg.qbar);

    let offload_cost = p1.opt_value + params.phi + dev.e_tail;
    let offload_ok =
        p1.f_local <= dev.f_max * (1.0 + PLAN_TOL) && p1.r_max <= tau_d * (1.0 + PLAN_TOL);

    let take_offload = match local {
        Some(l) => offload_ok && offload_cost < l.cost,
        None => offload_ok,
    };
    let (branch, plan, opt_value) = if take_offload {
        let plan = OffloadPlan {
            x0: p1.x0_star,
            allocations: selected
                .iter()
                .copied()
                .zip(p1.allocations.iter().copied())
                .collect(),
            schedule: FrequencySchedule::uniform(params.b0 * p1.x0_star, p1.f_local),
        };
        (Branch::Offload, plan, offload_cost)
    } else {
        let l = local.ok_or(SolverError::DeadlineInfeasible)?;
        (Branch::Local, local_solution(l, params.b0), l.cost)
    };

    Ok(P0Solution {
        branch,
        plan,
        opt_value,
        gates: Some(gates),
        optimality_certified: gates.gate_ok,
        selected,
        p1: Some(p1),
        local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::evaluate;
    use crate::testutil::{random_fleet, reference_instance, server};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    fn bisect_cubic(c: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, c.max(1.0));
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid.powi(3) + 3.0 * mid.powi(2) < c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn reference_params() -> DerivedParams {
        reference_instance(vec![], 0).derive_params()
    }

    #[test]
    fn fbar_unconstrained_and_capped() {
        assert_eq!(fbar(20.0, 1e-26, 2e9), 1e9);
        assert!(rel(2.0 * 1e-26 * fbar(20.0, 1e-26, 2e9).powi(3), 20.0) < 1e-15);
        assert_eq!(fbar(20.0, 1e-26, 5e8), 5e8);
        assert!(fbar(1e-12, 1e-26, 2e9) < 1e5);
    }

    #[test]
    fn local_optimum_reference_value() {
        let d = reference_instance(vec![], 0).device;
        let l = opt_local(2.8672e8, 20.0, &d, f64::INFINITY).unwrap();
        assert_eq!(l.frequency, 1e9);
        assert!(rel(l.cost, 8.6016) < 1e-12);
        assert!(rel(l.delay, 0.28672) < 1e-12);
    }

    #[test]
    fn local_optimum_matches_frequency_grid() {
        let d = reference_instance(vec![], 0).device;
        let l = opt_local(2.8672e8, 20.0, &d, f64::INFINITY).unwrap();
        let best = (1..=200_000)
            .map(|i| {
                let f = d.f_max * i as f64 / 200_000.0;
                2.8672e8 * (1e-26 * f * f + 20.0 / f)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(l.cost <= best + 1e-12);
        assert!(rel(best, l.cost) < 1e-6);
    }

    #[test]
    fn local_deadline_forces_frequency() {
        let d = reference_instance(vec![], 0).device;
        match opt_local(2.8672e8, 20.0, &d, 0.1) {
            Err(SolverError::DeadlineInfeasibleLocally { required_hz, .. }) => {
                assert!(rel(required_hz, 2.8672e9) < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        let l = opt_local(2.8672e8, 20.0, &d, 0.2).unwrap();
        assert!(rel(l.delay, 0.2) < 1e-12);
    }

    #[test]
    fn local_optimum_when_cap_binds() {
        let mut d = reference_instance(vec![], 0).device;
        d.f_max = 5e8;
        let l = opt_local(2.8672e8, 20.0, &d, f64::INFINITY).unwrap();
        assert_eq!(l.frequency, 5e8);
        assert!(rel(l.cost, 2.8672e8 * (1e-26 * 2.5e17 + 20.0 / 5e8)) < 1e-12);
    }

    #[test]
    fn cubic_exact_roots() {
        assert_eq!(solve_cubic(0.0).unwrap(), 0.0);
        assert!((solve_cubic(5.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((solve_cubic(28.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            solve_cubic(-1.0),
            Err(SolverError::NegativeRhs(_))
        ));
        assert!(matches!(
            solve_cubic(f64::NAN),
            Err(SolverError::NegativeRhs(_))
        ));
    }

    #[test]
    fn cubic_against_bisection() {
        let y = solve_cubic(0.496).unwrap();
        assert!((y - bisect_cubic(0.496)).abs() < 1e-14);
        assert!((y - 0.365).abs() < 1e-3);
    }

    #[test]
    fn cubic_extremes() {
        for c in [1e-300, 1e-30, 1e-8, 1e8, 1e30, 1e200] {
            let y = solve_cubic(c).unwrap();
            let resid = (2.0 * y * y * y + 3.0 * y * y - c).abs();
            assert!(resid <= 1e-10 * c.max(1.0), "c = {c}, resid = {resid}");
        }
    }

    #[test]
    fn reference_subset_solution() {
        let inst = reference_instance(random_fleet(100, 11), 5);
        let p = inst.derive_params();
        let rk = selection::rank_servers(&p.q).unwrap();
        let agg = selection::subset_aggregates(p.q0, rk.q_prefix(5)).unwrap();
        let s = solve_p1(&p, &agg, rk.q_prefix(5), 20.0).unwrap();
        assert!((agg.qbar - 0.1788).abs() < 0.005, "qbar {}", agg.qbar);
        assert!((s.y_star - 0.365).abs() < 0.02, "y {}", s.y_star);
        assert!((s.opt_value - 2.87).abs() < 0.1, "opt {}", s.opt_value);
        assert!(rel(s.r_max, (1.0 - s.x0_star) * agg.qbar) < 1e-12);
        let total: f64 = s.x0_star + s.allocations.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(s.f_local <= inst.device.f_max);
        assert!(rel(s.y_star, s.x0_star / (1.0 - s.x0_star)) < 1e-9);
        assert!(s.assumption_holds);
    }

    #[test]
    fn subset_mismatch_is_rejected() {
        let p = reference_params();
        let agg = selection::subset_aggregates(p.q0, &[0.1, 0.2]).unwrap();
        assert!(matches!(
            solve_p1(&p, &agg, &[0.1], 20.0),
            Err(SolverError::SubsetMismatch { .. })
        ));
    }

    #[test]
    fn vanishing_qbar_offloads_everything() {
        let mut p = reference_params();
        p.q0 = 1e-9;
        let agg = selection::subset_aggregates(p.q0, &[1e-9]).unwrap();
        let s = solve_p1(&p, &agg, &[1e-9], 20.0).unwrap();
        assert!(s.x0_star < 1e-6);
        assert!(s.r_max < 1e-8);
    }

    #[test]
    fn large_qbar_keeps_work_local() {
        let p = reference_params();
        let o = optimum_at_qbar(p.k, p.phi, 20.0, 1e4).unwrap();
        assert!(o.x0 > 0.999);
        // Delay approaches the unconstrained local delay.
        let r_star = (2.0 * p.k / 20.0).cbrt();
        assert!(rel(o.r_max, r_star) < 1e-3);
    }

    #[test]
    fn equal_qbar_gives_equal_value() {
        let p = reference_params();
        // 1/(1/0.1 + 1/0.1) = 0.05 = 1/(1/0.075 + 1/0.15)
        let a = selection::subset_aggregates(p.q0, &[0.1, 0.1]).unwrap();
        let b = selection::subset_aggregates(p.q0, &[0.075, 0.15]).unwrap();
        let sa = solve_p1(&p, &a, &[0.1, 0.1], 20.0).unwrap();
        let sb = solve_p1(&p, &b, &[0.075, 0.15], 20.0).unwrap();
        assert!(rel(sa.opt_value, sb.opt_value) < 1e-12);
        assert!(rel(sa.r_max, sb.r_max) < 1e-12);
        assert!(rel(sa.x0_star, sb.x0_star) < 1e-12);
        assert_ne!(sa.allocations, sb.allocations);
    }

    #[test]
    fn h_at_zero_and_pole() {
        let p = reference_params();
        let h = h_values(0.0, 0.18, 0.3, p.k, p.phi, 20.0).unwrap();
        assert!(rel(h.h1, 20.0 * 0.18) < 1e-15);
        assert_eq!(h.h3, 0.0);
        assert_eq!(h.region, HRegion::Low);
        assert_eq!(
            h_values(1.0, 0.18, 0.3, p.k, p.phi, 20.0),
            Err(SolverError::PoleAtOne)
        );
        assert!(matches!(
            h_values(1.5, 0.18, 0.3, p.k, p.phi, 20.0),
            Err(SolverError::InvalidFraction(_))
        ));
    }

    #[test]
    fn h_pieces_meet_at_boundaries() {
        let p = reference_params();
        let probe = h_values(0.0, 0.18, 0.3, p.k, p.phi, 20.0).unwrap();
        let lo = h_values(probe.lower_boundary, 0.18, 0.3, p.k, p.phi, 20.0).unwrap();
        assert!(rel(lo.h1, lo.h3) < 1e-9);
        assert_eq!(lo.region, HRegion::Low);
        let hi = h_values(probe.upper_boundary, 0.18, 0.3, p.k, p.phi, 20.0).unwrap();
        assert!(rel(hi.h2, hi.h3) < 1e-9);
        assert_eq!(hi.region, HRegion::High);
        let mid = 0.5 * (probe.lower_boundary + probe.upper_boundary);
        assert_eq!(
            h_values(mid, 0.18, 0.3, p.k, p.phi, 20.0).unwrap().region,
            HRegion::Middle
        );
    }

    #[test]
    fn h1_minimum_is_closed_form() {
        let p = reference_params();
        let o = optimum_at_qbar(p.k, p.phi, 20.0, 0.18).unwrap();
        let h = h_values(o.x0, 0.18, 0.3, p.k, p.phi, 20.0).unwrap();
        assert!(rel(h.h1, o.opt_value) < 1e-12);
        // 1-D scan over the low piece.
        let scan = (0..=100_000)
            .map(|i| h.lower_boundary * i as f64 / 100_000.0)
            .map(|x| h_values(x, 0.18, 0.3, p.k, p.phi, 20.0).unwrap().h1)
            .fold(f64::INFINITY, f64::min);
        assert!(o.opt_value <= scan + 1e-12);
        assert!(rel(scan, o.opt_value) < 1e-6);
    }

    #[test]
    fn degenerate_gates_are_unbounded() {
        let mut inst = reference_instance(vec![], 0);
        // alpha * B0^3 == 2 K f_max^3  <=>  alpha == 2 kappa f_max^3.
        inst.device.f_max = 1e9;
        let p = inst.derive_params();
        let alpha = 2.0 * 1e-26 * 1e27;
        let g = gates(&p, &inst.device, alpha, f64::INFINITY, 0.2);
        assert_eq!(g.qbar_star, f64::INFINITY);
        assert_eq!(g.qbar_max, f64::INFINITY);
        assert!(g.gate_ok);
    }

    #[test]
    fn reference_frequency_gate_never_binds() {
        let inst = reference_instance(vec![], 0);
        let p = inst.derive_params();
        let denom = 20.0 * p.b0.powi(3) - 2.0 * p.k * 2e9f64.powi(3);
        assert!(denom < 0.0);
        let g = gates(&p, &inst.device, 20.0, f64::INFINITY, 0.18);
        assert_eq!(g.qbar_max, f64::INFINITY);
        assert!(g.gate_ok);
    }

    #[test]
    fn frequency_gate_closed_form_when_it_binds() {
        let mut inst = reference_instance(vec![], 0);
        inst.device.f_max = 5e8;
        let p = inst.derive_params();
        let g = gates(&p, &inst.device, 20.0, f64::INFINITY, 0.18);
        assert!(g.qbar_max.is_finite() && g.qbar_max > 0.0);
        // At the gate the optimal frequency equals f_max.
        let o = optimum_at_qbar(p.k, p.phi, 20.0, g.qbar_max).unwrap();
        assert!(rel(p.b0 * o.xi, 5e8) < 1e-9);
        let below = optimum_at_qbar(p.k, p.phi, 20.0, 0.9 * g.qbar_max).unwrap();
        assert!(p.b0 * below.xi < 5e8);
    }

    #[test]
    fn deadline_gate_round_trip() {
        let p = reference_params();
        let r_star = (2.0 * p.k / 20.0).cbrt();
        // Deadlines at or beyond R* never bind.
        assert_eq!(qbar_for_deadline(&p, 20.0, 0.5), f64::INFINITY);
        assert_eq!(qbar_for_deadline(&p, 20.0, r_star), f64::INFINITY);
        for tau in [0.05, 0.1, 0.13, 0.2, 0.28] {
            let qs = qbar_for_deadline(&p, 20.0, tau);
            let r = optimum_at_qbar(p.k, p.phi, 20.0, qs).unwrap().r_max;
            assert!(rel(r, tau) < 1e-8, "tau {tau}: r {r}");
            // Root of the deadline cubic in Qbar.
            let t3 = tau * tau * tau;
            let resid = (2.0 - 20.0 / p.k * t3) * qs.powi(3)
                - (3.0 * tau + p.phi / p.k * t3) * qs * qs
                + t3;
            assert!(
                resid.abs() < 1e-9 * (3.0 * tau * qs * qs),
                "tau {tau}: {resid}"
            );
        }
    }

    #[test]
    fn solve_p0_reference_settings() {
        let inst = reference_instance(random_fleet(100, 5), 5);
        let s = solve_p0(&inst).unwrap();
        assert_eq!(s.branch, Branch::Offload);
        assert!(s.optimality_certified);
        assert!((s.opt_value - 3.1).abs() < 0.15, "opt {}", s.opt_value);
        assert!(rel(s.local.unwrap().cost, 8.6016) < 1e-12);
        let c = evaluate(&inst, &s.plan).unwrap();
        assert!(rel(c.objective, s.opt_value) < 1e-9);
        assert!(c.feasible);
        assert_eq!(s.plan.servers_used(), 5);
    }

    #[test]
    fn empty_fleet_runs_locally() {
        let inst = reference_instance(vec![], 0);
        let s = solve_p0(&inst).unwrap();
        assert_eq!(s.branch, Branch::Local);
        assert!(rel(s.opt_value, 8.6016) < 1e-12);
        assert_eq!(s.plan.x0, 1.0);
    }

    #[test]
    fn heavy_tail_energy_keeps_task_local() {
        let mut inst = reference_instance(random_fleet(20, 5), 5);
        inst.device.e_tail = 100.0;
        let s = solve_p0(&inst).unwrap();
        assert_eq!(s.branch, Branch::Local);
        assert!(rel(s.opt_value, 8.6016) < 1e-12);
    }

    #[test]
    fn impossible_deadline_is_reported() {
        let mut inst = reference_instance(random_fleet(20, 5), 5);
        inst.task.tau_d = Some(1e-9);
        assert_eq!(solve_p0(&inst), Err(SolverError::DeadlineInfeasible));
    }

    #[test]
    fn invalid_instances_are_rejected() {
        let inst = reference_instance(random_fleet(3, 5), 5);
        assert!(matches!(
            solve_p0(&inst),
            Err(SolverError::InvalidInstance(_))
        ));
    }

    #[test]
    fn uncertified_plan_falls_back_to_local() {
        // f_max tight enough that the closed-form frequency overshoots it.
        let mut inst = reference_instance(vec![server("slow", 1e6, 1e8)], 1);
        inst.device.f_max = 1.2e8;
        inst.alpha = 150.0;
        let s = solve_p0(&inst).unwrap();
        let g = s.gates.unwrap();
        assert!(!g.gate_ok);
        assert!(!s.optimality_certified);
        assert!(s.p1.as_ref().unwrap().f_local > inst.device.f_max);
        assert_eq!(s.branch, Branch::Local);
        assert!(evaluate(&inst, &s.plan).unwrap().feasible);
    }

    proptest! {
        #[test]
        fn cubic_round_trip(c in 0.0f64..1e6) {
            let y = solve_cubic(c).unwrap();
            prop_assert!(y >= 0.0);
            prop_assert!((2.0 * y.powi(3) + 3.0 * y.powi(2) - c).abs() <= 1e-10 * c.max(1.0));
        }

        #[test]
        fn cubic_is_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            prop_assume!(a < b);
            prop_assert!(solve_cubic(a).unwrap() <= solve_cubic(b).unwrap());
        }

        #[test]
        fn identity_and_balance(
            qbar in 0.01f64..2.0, alpha in 0.5f64..200.0, kscale in 0.1f64..10.0,
        ) {
            let p = reference_params();
            let k = p.k * kscale;
            let o = optimum_at_qbar(k, p.phi, alpha, qbar).unwrap();
            let h = h_values(o.x0, qbar, qbar * 2.0, k, p.phi, alpha).unwrap();
            prop_assert!(rel(h.h1, o.opt_value) < 1e-9);
            // Local delay at the uniform frequency equals the server delay.
            let f = p.b0 * o.xi;
            prop_assert!(rel(p.b0 * o.x0 / f, o.r_max) < 1e-9);
        }

        #[test]
        fn value_and_delay_increase_with_qbar(
            a in 0.01f64..1.0, b in 0.01f64..1.0, alpha in 1.0f64..150.0,
        ) {
            prop_assume!(a < b * (1.0 - 1e-6));
            let p = reference_params();
            let oa = optimum_at_qbar(p.k, p.phi, alpha, a).unwrap();
            let ob = optimum_at_qbar(p.k, p.phi, alpha, b).unwrap();
            prop_assert!(oa.opt_value < ob.opt_value);
            prop_assert!(oa.r_max < ob.r_max);
        }

        #[test]
        fn minima_ordering_chain(qbar in 0.02f64..0.5, spread in 1.0f64..5.0, alpha in 1.0f64..150.0) {
            let p = reference_params();
            let qu = qbar * spread;
            let probe = h_values(0.0, qbar, qu, p.k, p.phi, alpha).unwrap();
            let o = optimum_at_qbar(p.k, p.phi, alpha, qbar).unwrap();
            prop_assert!(o.x0 <= probe.lower_boundary + 1e-12);
            let min1 = o.opt_value;
            let min3 = h_values(probe.lower_boundary, qbar, qu, p.k, p.phi, alpha).unwrap().h3;
            let min2 = h_values(probe.upper_boundary, qbar, qu, p.k, p.phi, alpha).unwrap().h2;
            prop_assert!(min1 <= min3 * (1.0 + 1e-12));
            prop_assert!(min3 <= min2 * (1.0 + 1e-9));
        }

        #[test]
        fn certified_plans_respect_limits(seed in 0u64..500, m in 1usize..10, tau in 0.05f64..0.5, alpha in 1.0f64..150.0) {
            let mut inst = reference_instance(random_fleet(30, seed), m);
            inst.task.tau_d = Some(tau);
            inst.alpha = alpha;
            if let Ok(s) = solve_p0(&inst) {
                let c = evaluate(&inst, &s.plan).unwrap();
                prop_assert!(c.feasible);
                prop_assert!(rel(c.objective, s.opt_value) < 1e-6);
                if s.optimality_certified {
                    let p1 = s.p1.unwrap();
                    prop_assert!(p1.f_local <= inst.device.f_max * (1.0 + 1e-9));
                    prop_assert!(p1.r_max <= tau * (1.0 + 1e-9));
                }
            }
        }

        #[test]
        fn plans_equalize_server_delays(seed in 0u64..1000, m in 1usize..12) {
            let inst = reference_instance(random_fleet(40, seed), m);
            let s = solve_p0(&inst).unwrap();
            let c = evaluate(&inst, &s.plan).unwrap();
            let p1 = s.p1.unwrap();
            for st in &c.subtasks {
                prop_assert!(rel(st.r, p1.r_max) < 1e-9);
            }
            prop_assert!(rel(c.d_local, c.r_max) < 1e-9);
        }
    }
}
