//! `ckplan`: plan checkpoint placements, evaluate their cost, estimate
//! overlap distributions from depth streams, and replay traces through a
//! last-K prefix cache.
//!
//! Exit codes: 0 success, 2 malformed input, 3 constraint violation
//! (e.g. budget larger than the prefix), 64 usage error.

use ckplan::distribution::{plugin_bound, synth_distribution, DistributionError, OverlapHistogram};
use ckplan::estimator::EstimatorState;
use ckplan::placement::{
    balanced_placement, block_placement, dp_optimal, expected_cost, logarithmic_placement,
    sqrt_placement, CheckpointSet, PlacementError,
};
use ckplan::report;
use ckplan::simulator::{run_simulation, sweep, SimConfig, SimError, Strategy, Trace};
use ckplan::workload::{
    drift_trace, gen_groups, poisson_interleave, TraceSpec, WorkloadError,
};
use ckplan::Shape;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_INPUT: u8 = 2;
const EXIT_CONSTRAINT: u8 = 3;
const EXIT_USAGE: u8 = 64;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn constraint(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONSTRAINT,
            message: message.into(),
        }
    }
}

impl From<PlacementError> for CliError {
    fn from(e: PlacementError) -> Self {
        match e {
            PlacementError::BudgetTooLarge { .. } => Self::constraint(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<DistributionError> for CliError {
    fn from(e: DistributionError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Planner(PlacementError::BudgetTooLarge { .. }) => {
                Self::constraint(e.to_string())
            }
            other => Self::input(other.to_string()),
        }
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        Self::input(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "ckplan",
    version,
    about = "Checkpoint placement planning and prefix-cache simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a checkpoint placement for a histogram file.
    Plan(PlanArgs),
    /// Evaluate a checkpoint set against a histogram.
    Eval(EvalArgs),
    /// Replay a JSONL trace through the last-K cache.
    Simulate(SimulateArgs),
    /// Run a (strategy x budget) sweep and emit the Pareto-flagged table.
    Sweep(SweepArgs),
    /// Generate a synthetic grouped trace.
    Gen(GenArgs),
    /// Generate a depth-mode trace along a drifting distribution path.
    GenDrift(GenDriftArgs),
    /// Fold a depth stream into histogram snapshots.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Histogram JSON file: {"n": N, "mass": [p_1, ..., p_N]}.
    histogram: PathBuf,
    #[arg(long, default_value_t = 8)]
    budget: usize,
    #[arg(long, default_value = "dp", value_parser = Strategy::from_str)]
    strategy: Strategy,
    /// Block size; used by the block strategy and by --grid-mode.
    #[arg(long, default_value_t = 128)]
    block: usize,
    /// Restrict DP positions to multiples of --block instead of planning
    /// at token granularity.
    #[arg(long)]
    grid_mode: bool,
}

#[derive(Args)]
struct EvalArgs {
    histogram: PathBuf,
    /// Checkpoint JSON file: {"n": N, "positions": [...]}; `plan` output
    /// is accepted as-is.
    checkpoints: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSONL trace; token mode ({"id","group","tokens","arrival_time"})
    /// or depth mode ({"id","overlap_depth","length"}).
    trace: PathBuf,
    /// Cache capacity (last-K entries).
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    budget: usize,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long, default_value = "dp", value_parser = Strategy::from_str)]
    strategy: Strategy,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Planner re-solve cadence in observed hits.
    #[arg(long, default_value_t = 10)]
    refresh: u64,
    #[arg(long)]
    grid_mode: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-request CSV here; the summary JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    trace: PathBuf,
    /// Comma-separated checkpoint budgets.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    budgets: Vec<usize>,
    /// Comma-separated strategies.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "dp,balanced,logarithmic,sqrt,block",
        value_parser = Strategy::from_str
    )]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    refresh: u64,
    #[arg(long)]
    grid_mode: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ShapeArgs {
    /// Overlap shape: uniform | end_spike | multimodal | head_heavy.
    #[arg(long, default_value = "end_spike")]
    shape: String,
    #[arg(long, default_value_t = 0.9)]
    spike_mass: f64,
    /// Defaults to n/20 (at least 1) when omitted.
    #[arg(long)]
    spike_width: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    head_mass: f64,
    /// Defaults to n/10 (at least 1) when omitted.
    #[arg(long)]
    head_width: Option<usize>,
    #[arg(long, default_value_t = 3)]
    modes: usize,
}

impl ShapeArgs {
    fn build(&self, n: usize) -> Result<Shape, CliError> {
        self.build_named(&self.shape, n)
    }

    fn build_named(&self, name: &str, n: usize) -> Result<Shape, CliError> {
        let shape = match name {
            "uniform" => Shape::Uniform,
            "end_spike" => Shape::EndSpike {
                spike_mass: self.spike_mass,
                spike_width: self.spike_width.unwrap_or((n / 20).max(1)),
            },
            "head_heavy" => Shape::HeadHeavy {
                head_mass: self.head_mass,
                head_width: self.head_width.unwrap_or((n / 10).max(1)),
            },
            "multimodal" => Shape::Multimodal { n_modes: self.modes },
            other => {
                return Err(CliError::input(format!(
                    "unknown shape '{other}' (expected uniform|end_spike|multimodal|head_heavy)"
                )))
            }
        };
        Ok(shape)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    shape: ShapeArgs,
    /// Base sequence length (overlap depths range over 1..=n).
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    groups: usize,
    #[arg(long, default_value_t = 50)]
    per_group: usize,
    #[arg(long, default_value_t = 16)]
    suffix_min: usize,
    #[arg(long, default_value_t = 64)]
    suffix_max: usize,
    /// Poisson arrival rate per group.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSONL trace here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDriftArgs {
    #[command(flatten)]
    shape: ShapeArgs,
    /// Shape the path starts from (same parameter flags apply).
    #[arg(long, default_value = "head_heavy")]
    start_shape: String,
    /// Shape the path drifts to.
    #[arg(long, default_value = "end_spike")]
    end_shape: String,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    requests: usize,
    /// Per-step L1 drift bound.
    #[arg(long, default_value_t = 0.002)]
    drift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the true per-step distributions as a JSON array.
    #[arg(long)]
    path_out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Depth-mode JSONL stream.
    depths: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Emit a snapshot every this many observations.
    #[arg(long, default_value_t = 10)]
    every: u64,
    /// Depth range; defaults to the largest length in the stream.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the plug-in L1 bound at this confidence level.
    #[arg(long)]
    delta: Option<f64>,
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn plan_schedule(args: &PlanArgs, h: &OverlapHistogram) -> Result<CheckpointSet, CliError> {
    if args.block == 0 {
        return Err(CliError::input("block size must be at least 1"));
    }
    let n = h.n_positions();
    let set = match args.strategy {
        Strategy::Balanced => balanced_placement(n, args.budget)?,
        Strategy::Block => block_placement(n, args.block),
        Strategy::Sqrt => sqrt_placement(n),
        Strategy::Logarithmic => logarithmic_placement(n, args.budget)?,
        Strategy::Dp => dp_optimal(h, args.budget, args.grid_mode.then_some(args.block))?,
    };
    Ok(set)
}

fn cmd_plan(args: PlanArgs) -> Result<(), CliError> {
    let h = OverlapHistogram::from_json(&read_file(&args.histogram)?)?;
    let set = plan_schedule(&args, &h)?;
    let cost = expected_cost(&h, &set)?;
    // One object carrying both the checkpoint-set fields (so the output is
    // valid `eval` input) and the cost report.
    let mut value: serde_json::Value =
        serde_json::from_str(&set.to_json()).expect("schedule JSON is valid");
    value["cost"] = serde_json::to_value(&cost).expect("cost serializes");
    println!("{value}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let h = OverlapHistogram::from_json(&read_file(&args.histogram)?)?;
    let set = CheckpointSet::from_json(&read_file(&args.checkpoints)?)?;
    let cost = expected_cost(&h, &set)?;
    println!(
        "{}",
        serde_json::to_string(&cost).expect("cost serializes")
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let trace = Trace::from_jsonl(&read_file(&args.trace)?)?;
    let config = SimConfig {
        capacity: args.k,
        budget: args.budget,
        block: args.block,
        strategy: args.strategy,
        gamma: args.gamma,
        refresh_cadence: args.refresh,
        grid_mode: args.grid_mode,
        seed: args.seed,
        ..SimConfig::default()
    };
    let metrics = run_simulation(&trace, config.clone())?;
    if let Some(out) = &args.out {
        fs::write(out, report::simulation_csv(&metrics))
            .map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    }
    println!("{}", report::summary_json(&config, &metrics.aggregate));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let trace = Trace::from_jsonl(&read_file(&args.trace)?)?;
    let base = SimConfig {
        capacity: args.k,
        block: args.block,
        gamma: args.gamma,
        refresh_cadence: args.refresh,
        grid_mode: args.grid_mode,
        seed: args.seed,
        ..SimConfig::default()
    };
    let rows = sweep(&trace, &base, &args.budgets, &args.strategies)?;
    write_output(&args.out, &report::sweep_csv(&rows))
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    if args.rate.is_nan() || args.rate <= 0.0 {
        return Err(CliError::input("rate must be positive"));
    }
    let shape = args.shape.build(args.n)?;
    let overlap = synth_distribution(shape, args.n, args.seed)?;
    let spec = TraceSpec {
        n_groups: args.groups,
        requests_per_group: args.per_group,
        overlap,
        suffix_len: (args.suffix_min, args.suffix_max),
        seed: args.seed,
    };
    let groups = gen_groups(&spec)?;
    let requests = poisson_interleave(
        groups.into_iter().map(|g| g.requests).collect(),
        args.rate,
        args.seed,
    );
    let mut out = String::new();
    for r in &requests {
        writeln!(out, "{}", serde_json::to_string(r).expect("request serializes"))
            .expect("writing to string cannot fail");
    }
    write_output(&args.out, &out)
}

fn cmd_gen_drift(args: GenDriftArgs) -> Result<(), CliError> {
    let start_shape = args.shape.build_named(&args.start_shape, args.n)?;
    let end_shape = args.shape.build_named(&args.end_shape, args.n)?;
    let start = synth_distribution(start_shape, args.n, args.seed)?;
    let end = synth_distribution(end_shape, args.n, args.seed.wrapping_add(1))?;
    let trace = drift_trace(args.requests, &start, &end, args.drift, args.seed)?;
    let mut out = String::new();
    for r in &trace.records {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))
            .expect("writing to string cannot fail");
    }
    write_output(&args.out, &out)?;
    if let Some(path_out) = &args.path_out {
        let json = serde_json::to_string(&trace.path).expect("path serializes");
        fs::write(path_out, json)
            .map_err(|e| CliError::input(format!("{}: {e}", path_out.display())))?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let trace = Trace::from_jsonl(&read_file(&args.depths)?)?;
    let records = match trace {
        Trace::Depths(d) => d,
        Trace::Tokens(_) => {
            return Err(CliError::input(
                "estimate expects a depth-mode stream ({\"id\",\"overlap_depth\",\"length\"})",
            ))
        }
    };
    if args.every == 0 {
        return Err(CliError::input("--every must be at least 1"));
    }
    let n = args
        .n
        .unwrap_or_else(|| records.iter().map(|r| r.length).max().unwrap_or(1));
    let mut estimator =
        EstimatorState::new(n, args.gamma).map_err(|e| CliError::input(e.to_string()))?;
    let mut out = String::new();
    let mut emitted_at = 0;
    for rec in &records {
        if rec.overlap_depth == 0 {
            continue;
        }
        estimator
            .observe_clamped(rec.overlap_depth)
            .map_err(|e| CliError::input(e.to_string()))?;
        if estimator.sample_count() % args.every == 0 {
            emit_snapshot(&mut out, &estimator, args.delta)?;
            emitted_at = estimator.sample_count();
        }
    }
    if estimator.sample_count() == 0 {
        return Err(CliError::input("stream contains no positive-depth records"));
    }
    if estimator.sample_count() != emitted_at {
        emit_snapshot(&mut out, &estimator, args.delta)?;
    }
    write_output(&args.out, &out)
}

fn emit_snapshot(
    out: &mut String,
    estimator: &EstimatorState,
    delta: Option<f64>,
) -> Result<(), CliError> {
    let snapshot = estimator
        .snapshot()
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&snapshot.to_json()).expect("snapshot JSON is valid");
    value["count"] = estimator.sample_count().into();
    if let Some(delta) = delta {
        let bound = plugin_bound(
            estimator.sample_count() as usize,
            estimator.n_positions(),
            delta,
        )?;
        value["plugin_l1_bound"] = serde_json::json!(bound);
    }
    writeln!(out, "{value}").expect("writing to string cannot fail");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Gen(args) => cmd_gen(args),
        Command::GenDrift(args) => cmd_gen_drift(args),
        Command::Estimate(args) => cmd_estimate(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
