//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad usage, unreadable input, invalid instance or
//! failed verification, 2 no feasible plan.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::evaluator::{evaluate, FrequencySchedule, OffloadPlan, Segment};
use crate::experiments::{self, FleetDistribution, SweepConfig, SweepParam};
use crate::model::{Instance, ReferenceSettings};
use crate::solver::{self, SolverError};
use crate::verify::{self, Level, VerifyConfig};

pub const SEED_ENV: &str = "OFFLOAD_OPT_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "offload-opt",
    version,
    about = "Optimal partial offloading to edge servers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and print the optimal plan as JSON.
    Solve(SolveArgs),
    /// Score an explicit plan against an instance.
    Evaluate(EvaluateArgs),
    /// Compare the four policies across a parameter sweep and write a CSV.
    Sweep(SweepArgs),
    /// Run the oracle suite against the closed-form solver.
    Verify(VerifyArgs),
    /// Print a random instance as JSON.
    Gen(GenArgs),
}

/// Random instance on the reference device and task.
#[derive(Debug, Clone, Args)]
pub struct InlineArgs {
    /// Number of servers in the generated fleet.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Maximum number of servers used.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Delay weight in joules per second.
    #[arg(long, default_value_t = 20.0)]
    pub alpha: f64,
    /// Deadline in seconds; unbounded when omitted.
    #[arg(long)]
    pub tau_d: Option<f64>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

impl InlineArgs {
    fn instance(&self) -> Instance {
        experiments::gen_instance(
            &FleetDistribution::with_size(self.n),
            &ReferenceSettings::default(),
            self.alpha,
            self.m,
            self.tau_d,
            self.seed,
        )
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance JSON; when omitted the instance is generated from the inline flags.
    #[arg(long, conflicts_with_all = ["n", "m", "alpha", "tau_d"])]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub inline: InlineArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Plan JSON with `x0`, `allocations` and either `f_local_hz` or `schedule`.
    #[arg(long)]
    pub plan: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vary {
    M,
    Alpha,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub vary: Vary,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub tau_d: Option<f64>,
    /// Fleet size per trial.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Server limit when sweeping alpha.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Delay weight when sweeping m.
    #[arg(long, default_value_t = 20.0)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Quick,
    Full,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
    pub level: LevelArg,
    #[arg(long, env = SEED_ENV, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub inline: InlineArgs,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Failed(_) => 1,
            CliError::Infeasible(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Infeasible(m) | CliError::Failed(m) => m,
        }
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

/// JSON with every float written to 17 significant digits. Non-finite
/// values are already `null` by the time they reach a [`Value`].
pub fn to_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, &mut out);
    out
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => out.push_str(&u.to_string()),
            (_, Some(i), _) => out.push_str(&i.to_string()),
            (_, _, Some(f)) => out.push_str(&format!("{f:.16e}")),
            _ => out.push_str("null"),
        },
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn read_instance(path: &Path) -> Result<Instance, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let inst: Instance =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    check_instance(&inst)?;
    Ok(inst)
}

fn check_instance(inst: &Instance) -> Result<(), CliError> {
    inst.validate().map_err(|errs| {
        usage(
            errs.iter()
                .map(|e| format!("invalid instance: {e}"))
                .collect::<Vec<_>>()
                .join("\n"),
        )
    })
}

/// Floats that may be unbounded, as JSON numbers or `null`.
fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn solve(args: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inst = match &args.instance {
        Some(p) => read_instance(p)?,
        None => {
            let inst = args.inline.instance();
            check_instance(&inst)?;
            inst
        }
    };
    let sol = solver::solve_p0(&inst).map_err(|e| match e {
        SolverError::InvalidInstance(_) => usage(e),
        other => CliError::Infeasible(other.to_string()),
    })?;
    let cost = evaluate(&inst, &sol.plan).map_err(|e| CliError::Failed(e.to_string()))?;
    let allocations: Vec<Value> = sol
        .plan
        .allocations
        .iter()
        .map(|(&i, &x)| json!({"id": inst.servers[i].id, "fraction": x}))
        .collect();
    let gates = sol.gates.map_or(
        Value::Null,
        |g| json!({"qbar_star": finite(g.qbar_star), "qbar_max": finite(g.qbar_max), "q_m": g.q_m}),
    );
    let doc = json!({
        "branch": sol.branch.name(),
        "x0": sol.plan.x0,
        "allocations": allocations,
        "f_local_hz": sol.plan.schedule.uniform_frequency(),
        "objective_j": cost.objective,
        "delay_s": cost.delay,
        "energy_j": cost.energy,
        "certified": sol.optimality_certified,
        "gates": gates,
    });
    writeln!(out, "{}", to_json(&doc)).map_err(|e| CliError::Failed(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    x0: f64,
    #[serde(default)]
    allocations: Vec<AllocationEntry>,
    f_local_hz: Option<f64>,
    schedule: Option<Vec<SegmentEntry>>,
}

#[derive(Debug, Deserialize)]
struct AllocationEntry {
    id: String,
    fraction: f64,
}

#[derive(Debug, Deserialize)]
struct SegmentEntry {
    cycles: f64,
    frequency_hz: f64,
}

fn read_plan(path: &Path, inst: &Instance) -> Result<OffloadPlan, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let file: PlanFile =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut allocations = std::collections::BTreeMap::new();
    for a in &file.allocations {
        let idx = inst
            .servers
            .iter()
            .position(|s| s.id == a.id)
            .ok_or_else(|| usage(format!("plan names unknown server `{}`", a.id)))?;
        if allocations.insert(idx, a.fraction).is_some() {
            return Err(usage(format!("server `{}` listed twice", a.id)));
        }
    }
    let cycles = inst.task.gamma_a * inst.task.bits() * file.x0;
    let schedule = match (file.f_local_hz, file.schedule) {
        (Some(_), Some(_)) => {
            return Err(usage("give either `f_local_hz` or `schedule`, not both"))
        }
        (Some(f), None) => FrequencySchedule::uniform(cycles, f),
        (None, Some(segs)) => FrequencySchedule {
            segments: segs
                .into_iter()
                .map(|s| Segment {
                    cycles: s.cycles,
                    frequency: s.frequency_hz,
                })
                .collect(),
        },
        (None, None) if cycles > 0.0 => {
            return Err(usage("local share needs `f_local_hz` or `schedule`"))
        }
        (None, None) => FrequencySchedule::empty(),
    };
    Ok(OffloadPlan {
        x0: file.x0,
        allocations,
        schedule,
    })
}

fn evaluate_cmd(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inst = read_instance(&args.instance)?;
    let plan = read_plan(&args.plan, &inst)?;
    let cost = evaluate(&inst, &plan).map_err(usage)?;
    let mut doc = serde_json::to_value(&cost).map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(subtasks) = doc.get_mut("subtasks").and_then(Value::as_array_mut) {
        for s in subtasks {
            let idx = s["server"].as_u64().unwrap_or(0) as usize;
            s["server"] = json!(inst.servers[idx].id);
        }
    }
    writeln!(out, "{}", to_json(&doc)).map_err(|e| CliError::Failed(e.to_string()))?;
    if cost.feasible {
        Ok(())
    } else {
        Err(CliError::Infeasible("plan violates a constraint".into()))
    }
}

fn parse_values(vary: Vary, raw: &[String]) -> Result<SweepParam, CliError> {
    let bad = |v: &str| usage(format!("bad value `{v}` for --values"));
    Ok(match vary {
        Vary::M => SweepParam::M(
            raw.iter()
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad(v)))
                .collect::<Result<_, _>>()?,
        ),
        Vary::Alpha => SweepParam::Alpha(
            raw.iter()
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(v)))
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = SweepConfig::new(parse_values(args.vary, &args.values)?);
    config.trials = args.trials;
    config.seed = args.seed;
    config.tau_d = args.tau_d;
    config.jobs = args.jobs;
    config.m = args.m;
    config.alpha = args.alpha;
    config.fleet = FleetDistribution::with_size(args.n);
    let result = experiments::sweep(&config).map_err(usage)?;

    let file = fs::File::create(&args.out)
        .map_err(|e| CliError::Failed(format!("{}: {e}", args.out.display())))?;
    result
        .write_csv(std::io::BufWriter::new(file))
        .map_err(|e| CliError::Failed(e.to_string()))?;

    let io = |e: std::io::Error| CliError::Failed(e.to_string());
    writeln!(
        out,
        "{:<12} {:<6} {:>8} {:>14}",
        result.param_name, "policy", "feasible", "mean_normalized"
    )
    .map_err(io)?;
    for s in result.summary() {
        writeln!(
            out,
            "{:<12} {:<6} {:>8} {:>14}",
            experiments::fmt_sig9(s.param_value),
            s.policy.name(),
            s.count,
            experiments::fmt_sig9(s.mean_normalized)
        )
        .map_err(io)?;
    }
    Ok(())
}

fn verify_cmd(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let level = match args.level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let report = verify::run(&VerifyConfig::new(level, args.seed));
    writeln!(out, "{report}").map_err(|e| CliError::Failed(e.to_string()))?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("verification failed".into()))
    }
}

fn gen_cmd(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inst = args.inline.instance();
    check_instance(&inst)?;
    let doc = serde_json::to_value(&inst).map_err(|e| CliError::Failed(e.to_string()))?;
    let text = to_json(&doc);
    match &args.out {
        Some(p) => {
            fs::write(p, text + "\n").map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))
        }
        None => writeln!(out, "{text}").map_err(|e| CliError::Failed(e.to_string())),
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(a) => solve(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Verify(a) => verify_cmd(a, out),
        Command::Gen(a) => gen_cmd(a, out),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}
