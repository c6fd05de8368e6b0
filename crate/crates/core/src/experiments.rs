//! Policy comparison sweeps over random fleets.
//!
//! Each trial draws one fleet; every parameter value of a sweep reuses the
//! same fleets (common random numbers), so differences between parameter
//! values are not masked by fleet-to-fleet noise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evaluator::{evaluate, Policy};
use crate::model::{Instance, ReferenceSettings, ServerSpec};
use crate::solver;

pub const CSV_HEADER: [&str; 9] = [
    "param_name",
    "param_value",
    "policy",
    "trial",
    "objective_j",
    "delay_s",
    "energy_j",
    "normalized",
    "certified",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetDistribution {
    pub n: usize,
    pub r_range: (f64, f64),
    pub c_range: (f64, f64),
}

impl FleetDistribution {
    pub fn with_size(n: usize) -> Self {
        FleetDistribution {
            n,
            r_range: (1e8, 1e9),
            c_range: (1e9, 4e9),
        }
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo < hi && hi.is_finite();
        if ok(self.r_range) && ok(self.c_range) {
            Ok(())
        } else {
            Err(ExperimentError::InvalidConfig(
                "fleet ranges must satisfy 0 < low < high".into(),
            ))
        }
    }
}

impl Default for FleetDistribution {
    fn default() -> Self {
        Self::with_size(100)
    }
}

/// Scrambles `(base, trial)` into a per-trial seed.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base
        ^ (trial as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn gen_fleet(dist: &FleetDistribution, seed: u64) -> Vec<ServerSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dist.n)
        .map(|i| ServerSpec {
            id: format!("s{}", i + 1),
            rate: rng.random_range(dist.r_range.0..dist.r_range.1),
            capability: rng.random_range(dist.c_range.0..dist.c_range.1),
        })
        .collect()
}

pub fn gen_instance(
    dist: &FleetDistribution,
    defaults: &ReferenceSettings,
    alpha: f64,
    m: usize,
    tau_d: Option<f64>,
    seed: u64,
) -> Instance {
    Instance {
        task: defaults.task(tau_d),
        device: defaults.device.clone(),
        servers: gen_fleet(dist, seed),
        alpha,
        m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    M(Vec<usize>),
    Alpha(Vec<f64>),
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::M(_) => "m",
            SweepParam::Alpha(_) => "alpha",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepParam::M(v) => v.len(),
            SweepParam::Alpha(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            SweepParam::M(v) => v[i] as f64,
            SweepParam::Alpha(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub vary: SweepParam,
    /// Used when `vary` is not alpha.
    pub alpha: f64,
    /// Used when `vary` is not m.
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub tau_d: Option<f64>,
    pub fleet: FleetDistribution,
    pub defaults: ReferenceSettings,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn new(vary: SweepParam) -> Self {
        SweepConfig {
            vary,
            alpha: 20.0,
            m: 5,
            trials: 100,
            seed: 0,
            tau_d: None,
            fleet: FleetDistribution::default(),
            defaults: ReferenceSettings::default(),
            jobs: None,
        }
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.vary.is_empty() {
            return bad("no parameter values to sweep".into());
        }
        self.fleet.check()?;
        let ms: Vec<usize> = match &self.vary {
            SweepParam::M(v) => v.clone(),
            SweepParam::Alpha(a) => {
                if let Some(x) = a.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                    return bad(format!("alpha value {x} must be positive"));
                }
                vec![self.m]
            }
        };
        if let Some(&m) = ms.iter().find(|&&m| m == 0 || m > self.fleet.n) {
            return bad(format!("m = {m} must lie in 1..={}", self.fleet.n));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive".into());
        }
        if let Some(t) = self.tau_d {
            if t.is_nan() || t <= 0.0 {
                return bad("deadline must be positive".into());
            }
        }
        Ok(())
    }

    fn instance(&self, param: usize, trial: usize) -> Instance {
        let (alpha, m) = match &self.vary {
            SweepParam::M(v) => (self.alpha, v[param]),
            SweepParam::Alpha(v) => (v[param], self.m),
        };
        gen_instance(
            &self.fleet,
            &self.defaults,
            alpha,
            m,
            self.tau_d,
            trial_seed(self.seed, trial),
        )
    }
}

/// Outcome of one policy on one instance; the numbers are `None` when the
/// policy has no feasible plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param_index: usize,
    pub param_value: f64,
    pub policy: Policy,
    pub trial: usize,
    pub objective: Option<f64>,
    pub delay: Option<f64>,
    pub energy: Option<f64>,
    pub normalized: Option<f64>,
    /// Whether the closed-form solution of this instance is certified optimal.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param_name: &'static str,
    pub rows: Vec<SweepRow>,
}

/// Objective, delay and energy of one feasible plan.
type Totals = (f64, f64, f64);

fn run_trial(config: &SweepConfig, param: usize, trial: usize) -> Vec<SweepRow> {
    let inst = config.instance(param, trial);
    let certified = solver::solve_p0(&inst)
        .map(|s| s.optimality_certified)
        .unwrap_or(false);
    let outcomes: Vec<(Policy, Option<Totals>)> = Policy::ALL
        .iter()
        .map(|&p| {
            let cost = p
                .plan(&inst)
                .ok()
                .and_then(|plan| evaluate(&inst, &plan).ok())
                .filter(|c| c.feasible)
                .map(|c| (c.objective, c.delay, c.energy));
            (p, cost)
        })
        .collect();
    let tos = outcomes[0].1.map(|c| c.0);
    outcomes
        .into_iter()
        .map(|(policy, cost)| SweepRow {
            param_index: param,
            param_value: config.vary.value(param),
            policy,
            trial,
            objective: cost.map(|c| c.0),
            delay: cost.map(|c| c.1),
            energy: cost.map(|c| c.2),
            normalized: match (cost, tos) {
                (Some(c), Some(t)) => Some(c.0 / t),
                _ => None,
            },
            certified,
        })
        .collect()
}

/// Runs every policy on every (parameter value, trial) pair. Rows come back
/// ordered by parameter index, trial, then policy, whatever the thread count.
pub fn sweep(config: &SweepConfig) -> Result<SweepResult, ExperimentError> {
    config.check()?;
    let cells: Vec<(usize, usize)> = (0..config.vary.len())
        .flat_map(|p| (0..config.trials).map(move |t| (p, t)))
        .collect();
    let run = || -> Vec<SweepRow> {
        cells
            .par_iter()
            .map(|&(p, t)| run_trial(config, p, t))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let rows = match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };
    Ok(SweepResult {
        param_name: config.vary.name(),
        rows,
    })
}

/// Nine significant digits, plain decimal notation.
pub fn fmt_sig9(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub param_value: f64,
    pub policy: Policy,
    /// Rows with a feasible plan.
    pub count: usize,
    pub mean_objective: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub mean_normalized: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |x: Option<f64>| x.map(fmt_sig9).unwrap_or_default();
        for r in &self.rows {
            let value = if self.param_name == "m" {
                format!("{}", r.param_value as usize)
            } else {
                fmt_sig9(r.param_value)
            };
            w.write_record([
                self.param_name.to_string(),
                value,
                r.policy.name().to_string(),
                r.trial.to_string(),
                opt(r.objective),
                opt(r.delay),
                opt(r.energy),
                opt(r.normalized),
                r.certified.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn rows_for(&self, param_index: usize, policy: Policy) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.param_index == param_index && r.policy == policy)
    }

    /// Means per parameter value and policy over the rows with a feasible plan.
    pub fn summary(&self) -> Vec<PolicySummary> {
        let n_params = self
            .rows
            .iter()
            .map(|r| r.param_index + 1)
            .max()
            .unwrap_or(0);
        let mut out = Vec::new();
        for p in 0..n_params {
            for policy in Policy::ALL {
                let rows: Vec<&SweepRow> = self
                    .rows_for(p, policy)
                    .filter(|r| r.objective.is_some())
                    .collect();
                let Some(first) = self.rows_for(p, policy).next() else {
                    continue;
                };
                out.push(PolicySummary {
                    param_value: first.param_value,
                    policy,
                    count: rows.len(),
                    mean_objective: mean(rows.iter().filter_map(|r| r.objective)),
                    mean_delay: mean(rows.iter().filter_map(|r| r.delay)),
                    mean_energy: mean(rows.iter().filter_map(|r| r.energy)),
                    mean_normalized: mean(rows.iter().filter_map(|r| r.normalized)),
                });
            }
        }
        out
    }
}
