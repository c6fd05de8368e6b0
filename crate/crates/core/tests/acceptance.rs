//! Acceptance criteria, run in order by a single test so the timing
//! criteria are not disturbed by other tests. Each criterion writes one
//! PASS/FAIL line to stderr.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use offload_opt::evaluator::Policy;
use offload_opt::experiments::{self, FleetDistribution, SweepConfig, SweepParam, SweepResult};
use offload_opt::model::{Instance, ReferenceSettings};
use offload_opt::oracle;
use offload_opt::solver::{self, Branch};
use offload_opt::verify::{self, CheckResult};

const SEED: u64 = 20240601;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn checks_outcome(checks: &[CheckResult], min_cases: usize) -> Outcome {
    let passed = checks.iter().all(|c| c.passed() && c.cases >= min_cases);
    let detail = checks
        .iter()
        .map(|c| format!("[{c}]"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(passed, detail)
}

fn mean_of(
    result: &SweepResult,
    param: usize,
    policy: Policy,
    field: fn(&experiments::SweepRow) -> Option<f64>,
) -> f64 {
    let xs: Vec<f64> = result.rows_for(param, policy).filter_map(field).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn policy_ratios() -> Outcome {
    let start = Instant::now();
    let mut config = SweepConfig::new(SweepParam::M(vec![5]));
    config.trials = 200;
    config.seed = SEED;
    let result = experiments::sweep(&config).expect("sweep runs");
    let elapsed = start.elapsed();
    let obj = |p| mean_of(&result, 0, p, |r| r.objective);
    let complete = Policy::ALL
        .iter()
        .all(|&p| result.rows_for(0, p).all(|r| r.objective.is_some()));
    let (tos, mec, local) = (obj(Policy::Tos), obj(Policy::Mec), obj(Policy::Local));
    let vs_mec = tos / mec;
    let vs_local = tos / local;
    outcome(
        complete
            && (0.72..=0.90).contains(&vs_mec)
            && (0.28..=0.42).contains(&vs_local)
            && elapsed < Duration::from_secs(30),
        format!(
            "TOS/MEC = {vs_mec:.4}, TOS/Local = {vs_local:.4}, means tos {tos:.4} mec {mec:.4} local {local:.4}, {:.2?}",
            elapsed
        ),
    )
}

fn local_optimum() -> Outcome {
    let d = ReferenceSettings::default();
    let b0 = d.gamma_a * d.l_bits as f64;
    let local = solver::opt_local(b0, 20.0, &d.device, f64::INFINITY).expect("local feasible");
    let rel = (local.cost - 8.6016).abs() / 8.6016;
    outcome(
        rel <= 1e-6 && local.frequency == 1e9,
        format!(
            "OPT_local = {:.12}, rel err {rel:.2e}, f = {:e} Hz",
            local.cost, local.frequency
        ),
    )
}

fn grid_equivalence() -> Outcome {
    let start = Instant::now();
    let c = verify::check_grid(solver::solve_p1, 60, 1e-3, 0.02, SEED);
    let mut o = checks_outcome(std::slice::from_ref(&c), 50);
    let elapsed = start.elapsed();
    o.passed &= elapsed < Duration::from_secs(300);
    o.detail = format!("{} {elapsed:.2?}", o.detail);
    o
}

fn subset_selection() -> Outcome {
    let start = Instant::now();
    let c = verify::check_subsets(solver::solve_p1, 60, SEED);
    let mut o = checks_outcome(std::slice::from_ref(&c), 50);
    let elapsed = start.elapsed();
    o.passed &= elapsed < Duration::from_secs(60);
    o.detail = format!("{} {elapsed:.2?}", o.detail);
    o
}

fn identities() -> Outcome {
    checks_outcome(
        &verify::check_identities(solver::solve_p1, 1000, SEED),
        1000,
    )
}

fn monotonicity() -> Outcome {
    checks_outcome(
        &verify::check_monotonicity(solver::solve_p1, 100, SEED),
        100,
    )
}

fn jensen() -> Outcome {
    let d = ReferenceSettings::default();
    let b0 = d.gamma_a * d.l_bits as f64;
    let r = oracle::jensen_check(d.device.kappa, 0.4 * b0, 0.3, 1000, SEED);
    outcome(
        r.trials == 1000 && r.min_gap >= -1e-9 && r.uniform_error <= 1e-12,
        format!(
            "min gap {:.3e}, uniform rel err {:.3e}",
            r.min_gap, r.uniform_error
        ),
    )
}

fn shapes() -> Outcome {
    let ms = vec![1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20];
    let mut by_m = SweepConfig::new(SweepParam::M(ms.clone()));
    by_m.trials = 200;
    by_m.seed = SEED;
    let m_result = experiments::sweep(&by_m).expect("m sweep");
    let delays: Vec<f64> = (0..ms.len())
        .map(|i| mean_of(&m_result, i, Policy::Tos, |r| r.delay))
        .collect();
    let m_monotone = delays.windows(2).all(|w| w[1] <= w[0]);
    let i8 = ms.iter().position(|&m| m == 8).unwrap();
    let i20 = ms.len() - 1;
    let tail_gain = (delays[i8] - delays[i20]) / delays[i8];

    let alphas = vec![1.0, 5.0, 20.0, 70.0, 150.0];
    let mut by_alpha = SweepConfig::new(SweepParam::Alpha(alphas.clone()));
    by_alpha.trials = 200;
    by_alpha.seed = SEED;
    let a_result = experiments::sweep(&by_alpha).expect("alpha sweep");
    let a_delay: Vec<f64> = (0..alphas.len())
        .map(|i| mean_of(&a_result, i, Policy::Tos, |r| r.delay))
        .collect();
    let a_energy: Vec<f64> = (0..alphas.len())
        .map(|i| mean_of(&a_result, i, Policy::Tos, |r| r.energy))
        .collect();
    let delay_down = a_delay.windows(2).all(|w| w[1] <= w[0]);
    let energy_up = a_energy.windows(2).all(|w| w[1] >= w[0]);

    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    outcome(
        m_monotone && tail_gain < 0.05 && delay_down && energy_up,
        format!(
            "delay by m [{}], m=8 to m=20 gain {:.2}%, delay by alpha [{}], energy by alpha [{}]",
            fmt(&delays),
            100.0 * tail_gain,
            fmt(&a_delay),
            fmt(&a_energy)
        ),
    )
}

fn timed_solve(inst: &Instance) -> Duration {
    (0..3)
        .map(|_| {
            let start = Instant::now();
            let sol = solver::solve_p0(inst).expect("solvable");
            let t = start.elapsed();
            assert_eq!(sol.branch, Branch::Offload);
            t
        })
        .min()
        .unwrap()
}

fn scalability() -> Outcome {
    let make = |n: usize| {
        experiments::gen_instance(
            &FleetDistribution::with_size(n),
            &ReferenceSettings::default(),
            20.0,
            5,
            None,
            SEED,
        )
    };
    let small = timed_solve(&make(100_000));
    let large = timed_solve(&make(1_000_000));
    let growth = large.as_secs_f64() / small.as_secs_f64();
    outcome(
        large < Duration::from_secs(2) && growth < 15.0,
        format!("N=1e5 {small:.2?}, N=1e6 {large:.2?}, growth {growth:.2}x"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let run = |name: &str, jobs: &str| {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_offload-opt"))
            .args([
                "sweep", "--vary", "m", "--values", "1,5,8,20", "--trials", "25", "--seed", "7",
            ])
            .args(["--jobs", jobs, "--out"])
            .arg(&path)
            .output()
            .expect("binary runs");
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(path).expect("csv written")
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    let c = run("c.csv", "3");
    outcome(
        !a.is_empty() && a == b && a == c,
        format!(
            "{} bytes, repeated run identical: {}, other job count identical: {}",
            a.len(),
            a == b,
            a == c
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("policy cost ratios", policy_ratios),
        ("local-only optimum", local_optimum),
        ("grid oracle equivalence", grid_equivalence),
        ("subset selection optimality", subset_selection),
        ("analytic identities", identities),
        ("monotonicity", monotonicity),
        ("uniform schedule bound", jensen),
        ("sweep shapes", shapes),
        ("scalability", scalability),
        ("sweep determinism", determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let _ = writeln!(
            err,
            "criterion {:>2} {:<30} {}  {}",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
