//! Oracle suite behind `offload-opt verify`.
//!
//! Every check takes the fixed-subset solver as a function pointer so a
//! deliberately broken solver can be run through the same suite.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evaluator::{evaluate, FrequencySchedule, OffloadPlan};
use crate::experiments::{gen_fleet, trial_seed, FleetDistribution};
use crate::model::{DerivedParams, Instance, ReferenceSettings};
use crate::oracle::{self, GridSpec};
use crate::selection::{self, SubsetAggregates};
use crate::solver::{self, P1Solution, SolverError};

pub type P1Solver =
    fn(&DerivedParams, &SubsetAggregates, &[f64], f64) -> Result<P1Solution, SolverError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub level: Level,
    pub seed: u64,
    pub solver: P1Solver,
}

impl VerifyConfig {
    pub fn new(level: Level, seed: u64) -> Self {
        VerifyConfig {
            level,
            seed,
            solver: solver::solve_p1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest error seen, in the check's own metric.
    pub worst: f64,
    pub tolerance: f64,
    pub first_failure: Option<String>,
}

impl CheckResult {
    fn new(name: &'static str, tolerance: f64) -> Self {
        CheckResult {
            name,
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    /// Records one case with error `err`; NaN counts as a failure.
    fn record(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
        if err.is_nan() || err > self.tolerance {
            self.fail(what);
        }
    }

    fn fail(&mut self, what: impl FnOnce() -> String) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(what());
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} cases={:<6} worst={:.3e} tol={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )?;
        if let Some(msg) = &self.first_failure {
            write!(f, " first failure: {msg}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(
            f,
            "{}",
            if self.passed() {
                "all checks passed"
            } else {
                "verification FAILED"
            }
        )
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Reference device with a random fleet of `n` servers, `alpha` drawn
/// log-uniformly from `[1, 150]`, and `m` random in `1..=n`.
fn random_instance(n: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = (rng.random_range(1f64.ln()..150f64.ln())).exp();
    let m = rng.random_range(1..=n);
    let d = ReferenceSettings::default();
    Instance {
        task: d.task(None),
        device: d.device.clone(),
        servers: gen_fleet(&FleetDistribution::with_size(n), rng.random()),
        alpha,
        m,
    }
}

/// The `m` fastest servers of `inst` and the solver's answer on them.
fn solve_prefix(
    p1: P1Solver,
    inst: &Instance,
) -> Result<(Vec<usize>, SubsetAggregates, P1Solution), SolverError> {
    let params = inst.derive_params();
    let ranking = selection::rank_servers(&params.q)?;
    let subset = ranking.prefix(inst.m).to_vec();
    let q = ranking.q_prefix(inst.m);
    let agg = selection::subset_aggregates(params.q0, q)?;
    let sol = p1(&params, &agg, q, inst.alpha)?;
    Ok((subset, agg, sol))
}

/// Closed form against an exhaustive grid on fleets of one to three servers.
///
/// Grid points are feasible plans, so the closed form may never exceed the
/// grid minimum by more than rounding, and the two must agree within
/// `tolerance` relative.
pub fn check_grid(
    p1: P1Solver,
    instances: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> CheckResult {
    let mut res = CheckResult::new("grid equivalence", tolerance);
    let grid = GridSpec::uniform(step);
    for i in 0..instances {
        let n = 1 + i % oracle::MAX_GRID_SUBSET;
        let mut inst = random_instance(n, trial_seed(seed, i));
        inst.m = n;
        let closed = match solve_prefix(p1, &inst) {
            Ok((_, _, s)) => s.opt_value,
            Err(e) => {
                res.fail(|| format!("instance {i}: solver error {e}"));
                continue;
            }
        };
        let subset: Vec<usize> = (0..n).collect();
        let found = match oracle::grid_search_p1(&inst, &subset, &grid) {
            Ok(g) => g.objective,
            Err(e) => {
                res.fail(|| format!("instance {i}: grid error {e}"));
                continue;
            }
        };
        if closed > found + oracle::grid_error_bound(found) {
            res.cases += 1;
            res.fail(|| format!("instance {i}: closed form {closed} above grid minimum {found}"));
            continue;
        }
        let err = (closed - found).abs() / closed.abs();
        res.record(err, || {
            format!("instance {i}: closed form {closed}, grid {found}")
        });
    }
    res
}

/// The `m` fastest servers against every subset of at most `m` servers.
pub fn check_subsets(p1: P1Solver, instances: usize, seed: u64) -> CheckResult {
    let mut res = CheckResult::new("subset selection", 1e-9);
    for i in 0..instances {
        let n = 1 + i % oracle::MAX_BRUTEFORCE_FLEET;
        let inst = random_instance(n, trial_seed(seed, i));
        let prefix = match solve_prefix(p1, &inst) {
            Ok((_, _, s)) => s.opt_value,
            Err(e) => {
                res.fail(|| format!("instance {i}: solver error {e}"));
                continue;
            }
        };
        match oracle::best_subset_bruteforce(&inst) {
            Ok(best) => res.record(rel_err(prefix, best.opt_value), || {
                format!(
                    "instance {i}: prefix {prefix}, best subset {:?} {}",
                    best.subset, best.opt_value
                )
            }),
            Err(e) => res.fail(|| format!("instance {i}: brute force error {e}")),
        }
    }
    res
}

/// Closed-form identities on random instances: optimal value against the
/// objective curve, cubic residual, continuity of the objective pieces, delay
/// equalization, matching local and remote delay, and the evaluated cost.
pub fn check_identities(p1: P1Solver, draws: usize, seed: u64) -> Vec<CheckResult> {
    let mut value = CheckResult::new("optimal value identity", 1e-9);
    let mut cubic = CheckResult::new("cubic residual", 1e-10);
    let mut continuity = CheckResult::new("piece continuity", 1e-9);
    let mut equalized = CheckResult::new("delay equalization", 1e-9);
    let mut balanced = CheckResult::new("local equals remote", 1e-9);
    let mut evaluated = CheckResult::new("evaluated objective", 1e-9);
    for i in 0..draws {
        let inst = random_instance(1 + i % 20, trial_seed(seed, i));
        let params = inst.derive_params();
        let (subset, agg, sol) = match solve_prefix(p1, &inst) {
            Ok(s) => s,
            Err(e) => {
                value.fail(|| format!("draw {i}: solver error {e}"));
                continue;
            }
        };
        let (k, phi, alpha) = (params.k, params.phi, inst.alpha);
        let tag = || {
            format!(
                "draw {i} (n = {}, m = {}, alpha = {alpha})",
                inst.servers.len(),
                inst.m
            )
        };

        let c = (phi + alpha * agg.qbar) * agg.qbar * agg.qbar / k;
        let y = sol.y_star;
        cubic.record((2.0 * y * y * y + 3.0 * y * y - c).abs() / c.max(1.0), tag);

        match solver::h_values(sol.x0_star, agg.qbar, agg.qu, k, phi, alpha) {
            Ok(h) => value.record(rel_err(h.h1, sol.opt_value), tag),
            Err(e) => value.fail(|| format!("draw {i}: {e}")),
        }

        let lo = solver::h_values(
            agg.qbar / ((2.0 * k / alpha).cbrt() + agg.qbar),
            agg.qbar,
            agg.qu,
            k,
            phi,
            alpha,
        );
        let hi = solver::h_values(
            agg.qu / ((2.0 * k / alpha).cbrt() + agg.qu),
            agg.qbar,
            agg.qu,
            k,
            phi,
            alpha,
        );
        match (lo, hi) {
            (Ok(lo), Ok(hi)) => {
                continuity.record(rel_err(lo.h1, lo.h3).max(rel_err(hi.h2, hi.h3)), tag);
            }
            _ => continuity.fail(|| format!("draw {i}: boundary outside [0, 1)")),
        }

        let plan = OffloadPlan {
            x0: sol.x0_star,
            allocations: subset
                .iter()
                .copied()
                .zip(sol.allocations.iter().copied())
                .collect(),
            schedule: FrequencySchedule::uniform(params.b0 * sol.x0_star, sol.f_local),
        };
        match evaluate(&inst, &plan) {
            Ok(cost) => {
                let r_min = cost
                    .subtasks
                    .iter()
                    .map(|s| s.r)
                    .fold(f64::INFINITY, f64::min);
                equalized.record(rel_err(r_min, cost.r_max), tag);
                balanced.record(rel_err(cost.d_local, cost.r_max), tag);
                let reduced = cost.objective - phi - inst.device.e_tail;
                evaluated.record(rel_err(reduced, sol.opt_value), tag);
            }
            Err(e) => evaluated.fail(|| format!("draw {i}: {e}")),
        }
    }
    vec![value, cubic, continuity, equalized, balanced, evaluated]
}

/// Optimal value and delay strictly increase along sorted `Qbar` grids, and
/// `Q(n)` never increases as faster servers are added.
pub fn check_monotonicity(p1: P1Solver, samples: usize, seed: u64) -> Vec<CheckResult> {
    let mut along_qbar = CheckResult::new("increasing in Qbar", 0.0);
    let mut prefixes = CheckResult::new("Q(n) non-increasing", 0.0);
    for i in 0..samples {
        let inst = random_instance(1 + i % 50, trial_seed(seed, i));
        let params = inst.derive_params();
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed ^ 0x5eed, i));
        let lo = params.q0 * rng.random_range(1.05..2.0);
        let hi = lo * rng.random_range(1.5..50.0);
        let points = 64;
        let mut prev: Option<(f64, f64)> = None;
        let mut violations = 0usize;
        for j in 0..points {
            let qbar = lo * (hi / lo).powf(j as f64 / (points - 1) as f64);
            // A one-server subset with q chosen so its Qbar hits the grid point.
            let q = [qbar - params.q0];
            let agg = match selection::subset_aggregates(params.q0, &q) {
                Ok(a) => a,
                Err(_) => continue,
            };
            match p1(&params, &agg, &q, inst.alpha) {
                Ok(s) => {
                    if let Some((v, r)) = prev {
                        if !(s.opt_value > v && s.r_max > r) {
                            violations += 1;
                        }
                    }
                    prev = Some((s.opt_value, s.r_max));
                }
                Err(_) => violations += 1,
            }
        }
        along_qbar.record(violations as f64, || {
            format!("sample {i}: {violations} non-increasing steps")
        });

        let ranking = match selection::rank_servers(&params.q) {
            Ok(r) => r,
            Err(e) => {
                prefixes.fail(|| format!("sample {i}: {e}"));
                continue;
            }
        };
        let qs = selection::prefix_qbar(params.q0, &ranking, inst.servers.len());
        let bad = qs.windows(2).filter(|w| w[1] > w[0]).count();
        prefixes.record(bad as f64, || {
            format!("sample {i}: Q(n) increased {bad} times")
        });
    }
    vec![along_qbar, prefixes]
}

/// Random schedules of the reference local workload never beat the uniform one.
pub fn check_jensen(trials: usize, seed: u64) -> CheckResult {
    let mut res = CheckResult::new("uniform schedule optimal", 1e-12);
    let d = ReferenceSettings::default();
    let b0 = d.gamma_a * d.l_bits as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cycles = b0 * rng.random_range(0.05..1.0);
    let duration = rng.random_range(0.05..1.0);
    let r = oracle::jensen_check(d.device.kappa, cycles, duration, trials, rng.random());
    res.cases = r.trials;
    res.worst = r.uniform_error;
    if !r.passed {
        res.fail(|| {
            format!(
                "min gap {:.3e}, uniform error {:.3e}",
                r.min_gap, r.uniform_error
            )
        });
    }
    res
}

pub fn run(config: &VerifyConfig) -> VerifyReport {
    let (grid_n, step, subsets, draws, samples, jensen) = match config.level {
        Level::Quick => (9, 5e-3, 24, 200, 20, 200),
        Level::Full => (60, 1e-3, 60, 1000, 100, 1000),
    };
    let seed = config.seed;
    let p1 = config.solver;
    let mut checks = vec![
        check_grid(p1, grid_n, step, 0.02, seed),
        check_subsets(p1, subsets, seed.wrapping_add(1)),
    ];
    checks.extend(check_identities(p1, draws, seed.wrapping_add(2)));
    checks.extend(check_monotonicity(p1, samples, seed.wrapping_add(3)));
    checks.push(check_jensen(jensen, seed.wrapping_add(4)));
    VerifyReport { checks }
}
