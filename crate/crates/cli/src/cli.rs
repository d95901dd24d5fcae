//! Command-line surface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kfdp::io::{parse_id_batches, parse_id_list, read_stats_path};
use kfdp::selftest::run_selftest;
use kfdp::sim::{
    build_methods, coverage_experiment, parse_range_list, write_comparison_csv, DirectWConfig, MethodContext,
    QueryPlan, Scenario,
};
use kfdp::{Execution, PreparedStats, SignPathPool, TieBreak, VKPlan};
use serde::Serialize;
use thiserror::Error;

use crate::ops::{self, BoundQuery, CalibrateParams, CtParams, DEFAULT_ALPHA, DEFAULT_DELTA, DEFAULT_NSIM, DEFAULT_SEED};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kfdp::Error),
    #[error("{0}")]
    Usage(String),
    /// A cross-check found a disagreement.
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for a plan/statistics horizon mismatch or bad usage, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(kfdp::Error::PlanMismatch { .. }) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "kfdp", version, about = "Simultaneous FDP bounds for knockoff statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a (v, k) plan on a Monte Carlo pool and write it as JSON.
    Calibrate(CalibrateArgs),
    /// Interpolated bounds (js, kji, kr) for one set or a batch of sets.
    Bound(BoundArgs),
    /// Closed-testing bound through the shortcut.
    CtBound(CtBoundArgs),
    /// Coverage and nested-set comparison on simulated statistics.
    Simulate(SimulateArgs),
    /// Run the HTTP/JSON query service.
    Serve(ServeArgs),
    /// Exhaustive small-p cross-checks; nonzero exit on any mismatch.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TieArg {
    Stable,
    Random,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Statistics as CSV with `id,w` columns, or JSON when the name ends in `.json`.
    #[arg(long)]
    pub stats: PathBuf,
    /// Ordering among equal |W|.
    #[arg(long, value_enum, default_value = "stable")]
    pub tie_break: TieArg,
    /// Seed for `--tie-break random`.
    #[arg(long)]
    pub tie_seed: Option<u64>,
}

impl StatsArgs {
    pub fn load(&self) -> CliResult<PreparedStats> {
        let raw = read_stats_path(&self.stats)?;
        let policy = match self.tie_break {
            TieArg::Stable => TieBreak::StableByInputOrder,
            TieArg::Random => TieBreak::SeededRandom,
        };
        Ok(PreparedStats::prepare(&raw, policy, self.tie_seed)?)
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SetArgs {
    /// File of ids separated by commas, whitespace or newlines, or a JSON array.
    #[arg(long)]
    pub set: Option<PathBuf>,
    /// Ids given inline, comma separated.
    #[arg(long)]
    pub ids: Option<String>,
    /// File with one set per line; one JSON report per line is written.
    #[arg(long)]
    pub batch: Option<PathBuf>,
}

impl SetArgs {
    pub fn load(&self) -> CliResult<Vec<Vec<String>>> {
        if let Some(path) = &self.batch {
            return Ok(parse_id_batches(&fs::read_to_string(path)?)?);
        }
        let text = match (&self.set, &self.ids) {
            (Some(path), _) => fs::read_to_string(path)?,
            (None, Some(ids)) => ids.clone(),
            (None, None) => return Err(CliError::Usage("give --set, --ids or --batch".into())),
        };
        Ok(vec![parse_id_list(&text)?])
    }

    fn is_batch(&self) -> bool {
        self.batch.is_some()
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Named v family: A, B, C or D.
    #[arg(long, default_value = "B")]
    pub family: String,
    /// Explicit v such as `1,2,5:9`, overriding --family.
    #[arg(long)]
    pub v: Option<String>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Number of hypotheses the plan is calibrated for.
    #[arg(long)]
    pub p: usize,
    /// Exclusive upper limit on v (default p/3 + 1).
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_NSIM)]
    pub nsim: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write the plan here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the intermediate k vectors and probabilities to stderr.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum BoundMethodArg {
    Js,
    Kji,
    Kr,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, value_enum)]
    pub method: BoundMethodArg,
    /// Plan JSON, required for kji.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Single k for js.
    #[arg(long)]
    pub k: Option<u64>,
    /// Level for js and kr; kji takes it from the plan.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[command(flatten)]
    pub stats: StatsArgs,
    #[command(flatten)]
    pub sets: SetArgs,
}

#[derive(Debug, Args)]
pub struct CtBoundArgs {
    /// Local test weights: indicator, rank or kr.
    #[arg(long, default_value = "indicator")]
    pub family: String,
    /// v family for indicator and rank tests.
    #[arg(long, default_value = "B")]
    pub v_family: String,
    /// Use the single-size translation of this plan instead of a v family.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Exclusive upper limit on v (default p/3 + 1).
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_NSIM)]
    pub nsim: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Cross-check against exhaustive closed testing (p <= 14); any mismatch fails.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub stats: StatsArgs,
    #[command(flatten)]
    pub sets: SetArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    /// |W_i| = p - i + 1, fair-coin signs on the null set, +1 elsewhere.
    Direct,
    /// Every hypothesis null.
    Null,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "direct")]
    pub scenario: ScenarioArg,
    /// Number of hypotheses per replication.
    #[arg(long)]
    pub p: usize,
    /// Null positions for the direct scenario, e.g. `10:20` or `1,4,9:12`.
    #[arg(long)]
    pub nulls: Option<String>,
    /// Comma-separated methods: js-K (K an integer), kji-a to kji-d, kji-full, kct-a to kct-d, rank-a to rank-d, kr.
    #[arg(long, default_value = "kji-b,kct-b,kr")]
    pub methods: String,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Pool size for Monte Carlo calibration.
    #[arg(long, default_value_t = DEFAULT_NSIM)]
    pub nsim: usize,
    /// Exclusive upper limit on v (default p/3 + 1).
    #[arg(long)]
    pub cap: Option<usize>,
    /// Random query sets per replication, on top of the nested sets.
    #[arg(long, default_value_t = 100)]
    pub random_subsets: usize,
    /// CSV of mean nested-set bounds; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON coverage summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Disable data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory for `file` references in uploads.
    #[arg(long, env = "KFDP_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of hypotheses, at most 12.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=12))]
    pub p: u64,
    /// Random sign vectors per check.
    #[arg(long, default_value_t = 3)]
    pub draws: usize,
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T, pretty: bool) -> CliResult<()> {
    if pretty {
        serde_json::to_writer_pretty(&mut *out, value)?;
    } else {
        serde_json::to_writer(&mut *out, value)?;
    }
    writeln!(out)?;
    Ok(())
}

fn read_plan(path: &Path) -> CliResult<VKPlan> {
    let plan: VKPlan = serde_json::from_str(&fs::read_to_string(path)?)?;
    plan.validate()?;
    Ok(plan)
}

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Calibrate(a) => calibrate(a, out, err),
        Command::Bound(a) => bound(a, out),
        Command::CtBound(a) => ct_bound(a, out),
        Command::Simulate(a) => simulate(a, out, err),
        Command::Serve(a) => serve(a, err),
        Command::Selftest(a) => selftest(a, out),
    }
}

fn calibrate(a: CalibrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let params = CalibrateParams {
        family: a.family,
        v: a.v.as_deref().map(parse_range_list).transpose()?,
        alpha: a.alpha,
        cap: a.cap,
        delta: a.delta,
        nsim: a.nsim,
        seed: a.seed,
    };
    let (plan, trace) = ops::calibrate(&params, a.p)?;
    if a.trace {
        write_json(err, &trace, true)?;
    }
    match a.out {
        Some(path) => fs::write(path, serde_json::to_string_pretty(&plan)? + "\n")?,
        None => write_json(out, &plan, true)?,
    }
    Ok(())
}

fn bound(a: BoundArgs, out: &mut dyn Write) -> CliResult<()> {
    let stats = a.stats.load()?;
    let query = match a.method {
        BoundMethodArg::Js => BoundQuery::Js {
            k: a.k.ok_or_else(|| CliError::Usage("--method js needs --k".into()))?,
            alpha: a.alpha,
        },
        BoundMethodArg::Kji => {
            let path = a.plan.as_ref().ok_or_else(|| CliError::Usage("--method kji needs --plan".into()))?;
            BoundQuery::Kji(read_plan(path)?)
        }
        BoundMethodArg::Kr => BoundQuery::Kr { alpha: a.alpha },
    };
    let batch = a.sets.is_batch();
    for ids in a.sets.load()? {
        let reply = ops::bound(&stats, &query, &ids)?;
        write_json(out, &reply, !batch)?;
    }
    Ok(())
}

fn ct_bound(a: CtBoundArgs, out: &mut dyn Write) -> CliResult<()> {
    let stats = a.stats.load()?;
    let plan = a.plan.as_deref().map(read_plan).transpose()?;
    let params = CtParams {
        weights: a.family,
        v_family: a.v_family,
        alpha: a.alpha,
        delta: a.delta,
        cap: a.cap,
        nsim: a.nsim,
        seed: a.seed,
    };
    let spec = params.build(stats.p(), plan.as_ref())?;
    let batch = a.sets.is_batch();
    let mut disagreements = 0;
    for ids in a.sets.load()? {
        let reply = ops::ct_bound(&stats, &spec, &ids, a.oracle)?;
        disagreements += reply.oracle.as_ref().is_some_and(|o| !o.agrees) as usize;
        write_json(out, &reply, !batch)?;
    }
    if disagreements > 0 {
        return Err(CliError::CheckFailed(format!(
            "shortcut disagrees with exhaustive closed testing on {disagreements} set(s)"
        )));
    }
    Ok(())
}

/// Coverage summary written by `simulate --summary`.
#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    scenario: &'a str,
    p: usize,
    reps: usize,
    seed: u64,
    alpha: f64,
    nsim: usize,
    methods: &'a [kfdp::sim::MethodSummary],
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let scenario = match a.scenario {
        ScenarioArg::Direct => {
            let nulls = a.nulls.as_deref().ok_or_else(|| CliError::Usage("--scenario direct needs --nulls".into()))?;
            DirectWConfig::new(a.p, parse_range_list(nulls)?, a.seed)?
        }
        ScenarioArg::Null => DirectWConfig::global_null(a.p, a.seed),
    };
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let ctx = MethodContext {
        alpha: a.alpha,
        p: scenario.p(),
        delta: a.delta,
        cap: a.cap.unwrap_or_else(|| MethodContext::default_cap(a.p)),
        pool: Arc::new(SignPathPool::build_with(a.nsim, a.p, a.seed, exec)),
    };
    let labels: Vec<&str> = a.methods.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let methods = build_methods(&labels, &ctx)?;
    let queries = QueryPlan {
        nested: true,
        random_subsets: a.random_subsets,
    };
    let result = coverage_experiment(&scenario, &methods, a.reps, a.seed, &queries, exec)?;
    match &a.out {
        Some(path) => write_comparison_csv(&result, fs::File::create(path)?)?,
        None => write_comparison_csv(&result, &mut *out)?,
    }
    for m in &result.methods {
        writeln!(
            err,
            "{}: {} of {} replications violated (rate {:.4}, 95% CI {:.4}..{:.4})",
            m.label, m.violations, result.reps, m.violation_rate, m.ci.0, m.ci.1
        )?;
    }
    if let Some(path) = &a.summary {
        let summary = SimulationSummary {
            scenario: match a.scenario {
                ScenarioArg::Direct => "direct",
                ScenarioArg::Null => "null",
            },
            p: a.p,
            reps: a.reps,
            seed: a.seed,
            alpha: a.alpha,
            nsim: a.nsim,
            methods: &result.methods,
        };
        fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(())
}

fn serve(a: ServeArgs, err: &mut dyn Write) -> CliResult<()> {
    let addr = crate::service::bind_address(&a.host, a.port)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        writeln!(err, "listening on http://{}", listener.local_addr()?)?;
        crate::service::serve(listener, a.data_dir).await
    })?;
    Ok(())
}

fn selftest(a: SelftestArgs, out: &mut dyn Write) -> CliResult<()> {
    let report = run_selftest(a.seed, a.p as usize, a.draws)?;
    write_json(out, &report, true)?;
    if !report.passed() {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| c.mismatches > 0)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::CheckFailed(format!("self-test mismatches in: {}", failed.join(", "))));
    }
    Ok(())
}
