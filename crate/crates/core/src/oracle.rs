//! Brute-force verifiers.
//!
//! Nothing here calls into the closed-form machinery except
//! [`best_subset_bruteforce`], whose whole point is to enumerate subsets of
//! it. The grid search sees the problem only through [`evaluate`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evaluator::{
    evaluate, subtask_delay, FrequencySchedule, OffloadPlan, Segment, TAIL_TOL,
};
use crate::model::Instance;
use crate::selection;
use crate::solver::{self, SolverError};

pub const MAX_GRID_SUBSET: usize = 3;
pub const MAX_BRUTEFORCE_FLEET: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid search supports at most {MAX_GRID_SUBSET} servers, got {0}")]
    SubsetTooLarge(usize),
    #[error("subset must not be empty")]
    EmptySubset,
    #[error("subset brute force supports at most {MAX_BRUTEFORCE_FLEET} servers, got {0}")]
    FleetTooLarge(usize),
    #[error("grid steps must lie in (0, 0.1]")]
    BadGrid,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Grid resolutions. Fractions are scanned in multiples of their step; the
/// local delay is scanned in multiples of `delay_step` times a horizon taken
/// from the instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0_step: f64,
    pub allocation_step: f64,
    pub delay_step: f64,
}

impl GridSpec {
    pub fn uniform(step: f64) -> Self {
        GridSpec {
            x0_step: step,
            allocation_step: step,
            delay_step: step,
        }
    }

    fn check(&self) -> Result<(), OracleError> {
        let ok = |s: f64| s > 0.0 && s <= 0.1;
        if ok(self.x0_step) && ok(self.allocation_step) && ok(self.delay_step) {
            Ok(())
        } else {
            Err(OracleError::BadGrid)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    /// Best objective with the offload constants (`phi` and tail energy) removed.
    pub objective: f64,
    pub plan: OffloadPlan,
    pub evaluated: u64,
}

/// Slack allowed when asserting the closed form lies below a grid minimum.
/// Grid points are feasible plans, so only rounding separates them.
pub fn grid_error_bound(grid_min: f64) -> f64 {
    1e-9 * grid_min.abs() + 1e-12
}

/// Objective with the offload-only constants removed: the uplink energy of
/// the full task and the tail energy when anything is uploaded.
fn reduced_objective(instance: &Instance, plan: &OffloadPlan) -> Option<f64> {
    let c = evaluate(instance, plan).ok()?;
    let dev = &instance.device;
    let phi = dev.p_tx * instance.task.bits() / dev.r_hp;
    let tail = if plan.x0 < 1.0 - TAIL_TOL {
        dev.e_tail
    } else {
        0.0
    };
    Some(c.objective - phi - tail)
}

/// Allocation of `rest` over the subset minimizing the slowest subtask,
/// scanning every composition on the allocation grid.
fn best_split(instance: &Instance, subset: &[usize], x0: f64, rest: f64, step: f64) -> Vec<f64> {
    let n = subset.len();
    let units = (rest / step + 1e-9).floor() as usize;
    // table[s][j]: end-to-end delay of server s carrying j grid units.
    let table: Vec<Vec<f64>> = subset[..n - 1]
        .iter()
        .map(|&s| {
            (0..=units)
                .map(|j| subtask_delay(instance, s, x0, j as f64 * step).r)
                .collect()
        })
        .collect();
    // tail[u]: delay of the last server when the others hold u units.
    let tail_share = |u: usize| (rest - u as f64 * step).max(0.0);
    let last = subset[n - 1];
    let tail: Vec<f64> = (0..=units)
        .map(|u| {
            let x = tail_share(u);
            if x > 0.0 {
                subtask_delay(instance, last, x0, x).r
            } else {
                0.0
            }
        })
        .collect();

    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut counts = vec![0usize; n - 1];
    let mut used = 0usize;
    loop {
        let mut r = tail[used];
        for (s, &j) in counts.iter().enumerate() {
            if j > 0 {
                r = r.max(table[s][j]);
            }
        }
        if r < best.0 {
            let mut split: Vec<f64> = counts.iter().map(|&j| j as f64 * step).collect();
            split.push(tail_share(used));
            best = (r, split);
        }
        // Odometer over the first n - 1 servers.
        let mut k = 0;
        loop {
            if k == n - 1 {
                return best.1;
            }
            if used < units {
                counts[k] += 1;
                used += 1;
                break;
            }
            used -= counts[k];
            counts[k] = 0;
            k += 1;
        }
    }
}

/// Exhaustive scan of local share, allocation simplex, and local delay for a
/// fixed subset.
///
/// For a given local share and local delay, the objective depends on the
/// allocation only through the slowest subtask and is non-decreasing in it,
/// so each local share scans the simplex once for its fastest split and
/// reuses it across the delay grid.
pub fn grid_search_p1(
    instance: &Instance,
    subset: &[usize],
    grid: &GridSpec,
) -> Result<GridOptimum, OracleError> {
    grid.check()?;
    if subset.is_empty() {
        return Err(OracleError::EmptySubset);
    }
    if subset.len() > MAX_GRID_SUBSET {
        return Err(OracleError::SubsetTooLarge(subset.len()));
    }
    let l = instance.task.bits();
    let b0 = instance.task.gamma_a * l;
    let dev = &instance.device;
    let worst_path = subset
        .iter()
        .map(|&s| subtask_delay(instance, s, 0.0, 1.0).r)
        .fold(0.0, f64::max);
    let local_free = b0 * (2.0 * dev.kappa / instance.alpha).cbrt();
    let horizon = 2.0 * worst_path.max(local_free);

    let nx = (1.0 / grid.x0_step).round() as usize;
    let nd = (1.0 / grid.delay_step).round() as usize;

    let per_x0 = |i0: usize| -> Option<(f64, usize, OffloadPlan, u64)> {
        let x0 = (i0 as f64 * grid.x0_step).min(1.0);
        let rest = 1.0 - x0;
        let allocations = if rest > 0.0 {
            let split = best_split(instance, subset, x0, rest, grid.allocation_step);
            subset
                .iter()
                .copied()
                .zip(split)
                .filter(|(_, x)| *x > 0.0)
                .collect()
        } else {
            Default::default()
        };
        let mut plan = OffloadPlan {
            x0,
            allocations,
            schedule: FrequencySchedule::empty(),
        };
        let mut evaluated = 0;
        let mut best: Option<(f64, OffloadPlan)> = None;
        let cycles = b0 * x0;
        let delays: Box<dyn Iterator<Item = f64>> = if cycles > 0.0 {
            Box::new((1..=nd).map(|k| horizon * k as f64 * grid.delay_step))
        } else {
            Box::new(std::iter::once(0.0))
        };
        for d in delays {
            if cycles > 0.0 {
                let f = cycles / d;
                if f > dev.f_max {
                    continue;
                }
                plan.schedule.segments = vec![Segment {
                    cycles,
                    frequency: f,
                }];
            }
            evaluated += 1;
            if let Some(v) = reduced_objective(instance, &plan) {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, plan.clone()));
                }
            }
        }
        best.map(|(v, p)| (v, i0, p, evaluated))
    };

    let reduce = |a: (f64, usize, OffloadPlan, u64), b: (f64, usize, OffloadPlan, u64)| {
        let n = a.3 + b.3;
        let (v, i, p, _) = if (b.0, b.1) < (a.0, a.1) { b } else { a };
        (v, i, p, n)
    };

    let best = (0..=nx)
        .into_par_iter()
        .filter_map(per_x0)
        .reduce_with(reduce)
        .expect("x0 = 0 always yields a candidate");
    Ok(GridOptimum {
        objective: best.0,
        plan: best.2,
        evaluated: best.3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetOptimum {
    /// Fleet indices, ascending.
    pub subset: Vec<usize>,
    pub opt_value: f64,
    pub qbar: f64,
}

/// Closed-form value of every non-empty subset of at most `m` servers; the
/// cheapest one.
pub fn best_subset_bruteforce(instance: &Instance) -> Result<SubsetOptimum, OracleError> {
    let n = instance.servers.len();
    if n > MAX_BRUTEFORCE_FLEET {
        return Err(OracleError::FleetTooLarge(n));
    }
    if n == 0 || instance.m == 0 {
        return Err(OracleError::EmptySubset);
    }
    let params = instance.derive_params();
    let mut best: Option<SubsetOptimum> = None;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > instance.m {
            continue;
        }
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let q: Vec<f64> = subset.iter().map(|&i| params.q[i]).collect();
        let agg = selection::subset_aggregates(params.q0, &q).map_err(SolverError::from)?;
        let s = solver::solve_p1(&params, &agg, &q, instance.alpha)?;
        if best.as_ref().is_none_or(|b| s.opt_value < b.opt_value) {
            best = Some(SubsetOptimum {
                subset,
                opt_value: s.opt_value,
                qbar: agg.qbar,
            });
        }
    }
    Ok(best.expect("at least one subset"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JensenReport {
    pub trials: usize,
    /// Smallest `energy - kappa*B^3/R^2` over the random schedules.
    pub min_gap: f64,
    /// Relative error of the uniform schedule against the bound.
    pub uniform_error: f64,
    pub passed: bool,
}

/// Random piecewise schedules running `cycles` cycles in exactly `duration`
/// seconds never beat the uniform one: energy `>= kappa * B^3 / R^2`.
pub fn jensen_check(
    kappa: f64,
    cycles: f64,
    duration: f64,
    trials: usize,
    seed: u64,
) -> JensenReport {
    let bound = kappa * cycles.powi(3) / (duration * duration);
    let tol = 1e-9 * bound.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials {
        let k = rng.random_range(1..=16);
        let cw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let tw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let (cs, ts): (f64, f64) = (cw.iter().sum(), tw.iter().sum());
        let schedule = FrequencySchedule {
            segments: cw
                .iter()
                .zip(&tw)
                .map(|(c, t)| {
                    let seg_cycles = cycles * c / cs;
                    Segment {
                        cycles: seg_cycles,
                        frequency: seg_cycles / (duration * t / ts),
                    }
                })
                .collect(),
        };
        min_gap = min_gap.min(schedule.energy(kappa) - bound);
    }
    let uniform = FrequencySchedule::uniform(cycles, cycles / duration).energy(kappa);
    let uniform_error = (uniform - bound).abs() / bound;
    JensenReport {
        trials,
        min_gap,
        uniform_error,
        passed: min_gap >= -tol && uniform_error <= 1e-12,
    }
}
