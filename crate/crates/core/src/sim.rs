//! Synthetic knockoff statistics and coverage/comparison experiments.

use std::io::Write;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::bounds::{kji_false_discoveries, kr_false_discoveries};
use crate::calibration::{c_alpha, family_plan, js_v, VFamily, VKPlan, VKind};
use crate::closed_testing::{shortcut_bound, LocalTestSpec};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::pool::SignPathPool;
use crate::stats::{IndexSet, PreparedStats, RawEntry, RawStats};

/// Seed of replication `rep`, independent across replications.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    rng.next_u64()
}

/// `|W_i| = p - i + 1`; signs `+1` off the null set and fair coins on it.
#[derive(Clone, Debug, Serialize)]
pub struct DirectWConfig {
    pub p: usize,
    pub null_set: IndexSet,
    pub seed: u64,
}

impl DirectWConfig {
    pub fn new(p: usize, nulls: impl IntoIterator<Item = usize>, seed: u64) -> Result<Self> {
        let null_set = IndexSet::new(nulls.into_iter().collect(), p)?;
        Ok(Self { p, null_set, seed })
    }

    /// All hypotheses null.
    pub fn global_null(p: usize, seed: u64) -> Self {
        Self {
            p,
            null_set: IndexSet::full(p),
            seed,
        }
    }
}

/// Draws the statistics for the configured seed.
pub fn generate_direct_w(config: &DirectWConfig) -> Result<RawStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let entries = (1..=config.p)
        .map(|i| {
            let positive = !config.null_set.contains(i) || rng.random::<bool>();
            let mag = (config.p - i + 1) as f64;
            RawEntry {
                id: i.to_string(),
                w: if positive { mag } else { -mag },
            }
        })
        .collect();
    RawStats::new(entries)
}

/// One draw of statistics with the null status of every position.
#[derive(Clone, Debug)]
pub struct Replicate {
    pub stats: PreparedStats,
    pub is_null: Vec<bool>,
}

impl Replicate {
    /// `|R ∩ N|`.
    pub fn false_discoveries(&self, r: &IndexSet) -> u64 {
        r.iter().filter(|&j| self.is_null[j - 1]).count() as u64
    }
}

/// Source of replicates.
pub trait Scenario: Sync {
    fn p(&self) -> usize;
    fn draw(&self, seed: u64) -> Result<Replicate>;
}

impl Scenario for DirectWConfig {
    fn p(&self) -> usize {
        self.p
    }

    fn draw(&self, seed: u64) -> Result<Replicate> {
        let cfg = DirectWConfig {
            seed,
            ..self.clone()
        };
        let raw = generate_direct_w(&cfg)?;
        let stats = PreparedStats::prepare(&raw, Default::default(), None)?;
        // Magnitudes are distinct, so position i holds variable i.
        let is_null = (1..=self.p).map(|i| self.null_set.contains(i)).collect();
        Ok(Replicate { stats, is_null })
    }
}

/// A simultaneous bound as a false-discovery count for any query.
pub trait BoundMethod: Send + Sync {
    fn label(&self) -> &str;
    fn false_discoveries(&self, stats: &PreparedStats, r: &IndexSet) -> Result<u64>;
}

pub struct JsMethod {
    label: String,
    k: u64,
    alpha: f64,
}

impl JsMethod {
    pub fn new(k: u64, alpha: f64) -> Self {
        Self {
            label: format!("js-{k}"),
            k,
            alpha,
        }
    }
}

impl BoundMethod for JsMethod {
    fn label(&self) -> &str {
        &self.label
    }

    fn false_discoveries(&self, stats: &PreparedStats, r: &IndexSet) -> Result<u64> {
        let v = js_v(self.k, self.alpha, stats.p())?;
        Ok(kji_false_discoveries(stats, &[v], &[self.k], r).0)
    }
}

pub struct PlanMethod {
    label: String,
    plan: VKPlan,
}

impl PlanMethod {
    pub fn new(label: impl Into<String>, plan: VKPlan) -> Self {
        Self {
            label: label.into(),
            plan,
        }
    }

    pub fn plan(&self) -> &VKPlan {
        &self.plan
    }
}

impl BoundMethod for PlanMethod {
    fn label(&self) -> &str {
        &self.label
    }

    fn false_discoveries(&self, stats: &PreparedStats, r: &IndexSet) -> Result<u64> {
        crate::bounds::check_plan(stats, &self.plan)?;
        Ok(kji_false_discoveries(stats, &self.plan.v, &self.plan.k, r).0)
    }
}

pub struct KrMethod {
    c: f64,
}

impl KrMethod {
    pub fn new(alpha: f64) -> Self {
        Self { c: c_alpha(alpha) }
    }
}

impl BoundMethod for KrMethod {
    fn label(&self) -> &str {
        "kr"
    }

    fn false_discoveries(&self, stats: &PreparedStats, r: &IndexSet) -> Result<u64> {
        Ok(kr_false_discoveries(stats, self.c, r).0)
    }
}

pub struct CtMethod {
    label: String,
    spec: Arc<LocalTestSpec>,
}

impl CtMethod {
    pub fn new(label: impl Into<String>, spec: Arc<LocalTestSpec>) -> Self {
        Self {
            label: label.into(),
            spec,
        }
    }
}

impl BoundMethod for CtMethod {
    fn label(&self) -> &str {
        &self.label
    }

    fn false_discoveries(&self, stats: &PreparedStats, r: &IndexSet) -> Result<u64> {
        Ok(shortcut_bound(r, stats, &self.spec)?.t_bound)
    }
}

/// Reports a fixed fraction of every query, `1` or `0`.
pub struct ConstantMethod {
    label: String,
    all: bool,
}

impl ConstantMethod {
    pub fn trivial() -> Self {
        Self {
            label: "trivial".into(),
            all: true,
        }
    }

    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            all: false,
        }
    }
}

impl BoundMethod for ConstantMethod {
    fn label(&self) -> &str {
        &self.label
    }

    fn false_discoveries(&self, _: &PreparedStats, r: &IndexSet) -> Result<u64> {
        Ok(if self.all { r.len() as u64 } else { 0 })
    }
}

/// Shared settings for building methods from labels.
#[derive(Clone, Debug)]
pub struct MethodContext {
    pub alpha: f64,
    pub p: usize,
    pub delta: f64,
    /// Exclusive cap on `v` for the named families.
    pub cap: usize,
    pub pool: Arc<SignPathPool>,
}

impl MethodContext {
    /// Default cap keeps `v_i <= p / 3`.
    pub fn default_cap(p: usize) -> usize {
        (p / 3 + 1).max(2)
    }
}

/// Builds a method from a label: `js-<k>`, `kji-<a|b|c|d>`, `kji-full`,
/// `kct-<a|b|c|d>`, `rank-<a|b|c|d>`, `kr`, `trivial`, `zero`.
pub fn build_method(label: &str, ctx: &MethodContext) -> Result<Box<dyn BoundMethod>> {
    let label = label.trim().to_ascii_lowercase();
    let family = |s: &str| -> Result<VFamily> { Ok(VFamily::new(s.parse::<VKind>()?, ctx.cap)) };
    let (head, tail) = label.split_once('-').unwrap_or((label.as_str(), ""));
    let bad = || Error::Parse(format!("unknown method `{label}`"));
    Ok(match (head, tail) {
        ("kr", "") => Box::new(KrMethod::new(ctx.alpha)),
        ("trivial", "") => Box::new(ConstantMethod::trivial()),
        ("zero", "") => Box::new(ConstantMethod::zero()),
        ("js", k) => Box::new(JsMethod::new(k.parse().map_err(|_| bad())?, ctx.alpha)),
        ("kji", "full") => {
            let v: Vec<usize> = (1..=ctx.p).collect();
            let plan = crate::calibration::two_step_k(&v, ctx.alpha, ctx.delta, ctx.p, &ctx.pool)?;
            Box::new(PlanMethod::new(label.clone(), plan))
        }
        ("kji", f) => {
            let plan = family_plan(&family(f)?, ctx.alpha, ctx.delta, ctx.p, &ctx.pool)?;
            Box::new(PlanMethod::new(label.clone(), plan))
        }
        ("kct", f) => {
            let v = family(f)?.values();
            let spec = LocalTestSpec::kct(&v, ctx.alpha, ctx.delta, ctx.p, ctx.pool.clone())?;
            Box::new(CtMethod::new(label.clone(), Arc::new(spec)))
        }
        ("rank", f) => {
            let v = family(f)?.values();
            let spec = LocalTestSpec::rank(&v, ctx.alpha, ctx.delta, ctx.p, ctx.pool.clone())?;
            Box::new(CtMethod::new(label.clone(), Arc::new(spec)))
        }
        _ => return Err(bad()),
    })
}

pub fn build_methods(labels: &[&str], ctx: &MethodContext) -> Result<Vec<Box<dyn BoundMethod>>> {
    labels.iter().map(|l| build_method(l, ctx)).collect()
}

/// Which queries each replication checks.
#[derive(Clone, Debug)]
pub struct QueryPlan {
    /// Include `R_1, ..., R_p`.
    pub nested: bool,
    /// Random subsets, sizes spread evenly over `1..=p`.
    pub random_subsets: usize,
}

impl Default for QueryPlan {
    fn default() -> Self {
        Self {
            nested: true,
            random_subsets: 100,
        }
    }
}

impl QueryPlan {
    pub fn build(&self, stats: &PreparedStats, seed: u64) -> Vec<IndexSet> {
        let p = stats.p();
        let mut out = if self.nested { stats.nested_sets() } else { Vec::new() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        for j in 0..self.random_subsets {
            let size = 1 + (j * p) / self.random_subsets.max(1);
            let size = size.min(p);
            let picked = index::sample(&mut rng, p, size).into_iter().map(|x| x + 1);
            out.push(IndexSet::from_iter(picked));
        }
        out
    }
}

/// Coverage of one method.
#[derive(Clone, Debug, Serialize)]
pub struct MethodSummary {
    pub label: String,
    /// Replications with some query whose FDP exceeds its bound.
    pub violations: usize,
    pub violation_rate: f64,
    /// Exact 95% binomial interval for the violation rate.
    pub ci: (f64, f64),
    /// Mean bound on `R_i`, `i = 1..=p`.
    pub mean_nested_bound: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub reps: usize,
    pub seed: u64,
    pub replication_seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
    pub mean_true_fdp: Vec<f64>,
    pub mean_nested_size: Vec<f64>,
}

/// Clopper–Pearson interval for `x` successes in `n` trials.
pub fn clopper_pearson(x: usize, n: usize, level: f64) -> (f64, f64) {
    let a = (1.0 - level) / 2.0;
    let lo = if x == 0 {
        0.0
    } else {
        Beta::new(x as f64, (n - x + 1) as f64).map_or(0.0, |b| b.inverse_cdf(a))
    };
    let hi = if x == n {
        1.0
    } else {
        Beta::new((x + 1) as f64, (n - x) as f64).map_or(1.0, |b| b.inverse_cdf(1.0 - a))
    };
    (lo, hi)
}

struct RepOutcome {
    violated: Vec<bool>,
    nested: Vec<Vec<u64>>,
    nested_sizes: Vec<usize>,
    true_fd: Vec<u64>,
}

/// Runs `reps` replications and records, per method, whether any query had
/// FDP above its bound, along with mean bounds on the nested sets.
pub fn coverage_experiment(
    scenario: &dyn Scenario,
    methods: &[Box<dyn BoundMethod>],
    reps: usize,
    seed: u64,
    queries: &QueryPlan,
    exec: Execution,
) -> Result<ExperimentResult> {
    assert!(reps >= 1, "need at least one replication");
    let p = scenario.p();
    let seeds: Vec<u64> = (0..reps).map(|r| replication_seed(seed, r)).collect();
    let outcomes: Vec<Result<RepOutcome>> = par::map_indexed(exec, reps, |r| {
        let rep = scenario.draw(seeds[r])?;
        let qs = queries.build(&rep.stats, seeds[r] ^ 0x9E37_79B9_7F4A_7C15);
        let nested = rep.stats.nested_sets();
        let truth: Vec<u64> = qs.iter().map(|q| rep.false_discoveries(q)).collect();
        let mut violated = Vec::with_capacity(methods.len());
        let mut nested_bounds = Vec::with_capacity(methods.len());
        for m in methods {
            let mut bad = false;
            for (q, &fd) in qs.iter().zip(&truth) {
                if fd > m.false_discoveries(&rep.stats, q)? {
                    bad = true;
                    break;
                }
            }
            violated.push(bad);
            nested_bounds.push(
                nested
                    .iter()
                    .map(|q| m.false_discoveries(&rep.stats, q))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(RepOutcome {
            violated,
            nested: nested_bounds,
            nested_sizes: nested.iter().map(IndexSet::len).collect(),
            true_fd: nested.iter().map(|q| rep.false_discoveries(q)).collect(),
        })
    });
    let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let ratio = |num: u64, size: usize| if size == 0 { 0.0 } else { num as f64 / size as f64 };
    let n = reps as f64;
    let mut mean_true_fdp = vec![0.0; p];
    let mut mean_nested_size = vec![0.0; p];
    for o in &outcomes {
        for i in 0..p {
            mean_true_fdp[i] += ratio(o.true_fd[i], o.nested_sizes[i]) / n;
            mean_nested_size[i] += o.nested_sizes[i] as f64 / n;
        }
    }
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let violations = outcomes.iter().filter(|o| o.violated[mi]).count();
            let mut mean = vec![0.0; p];
            for o in &outcomes {
                for (i, slot) in mean.iter_mut().enumerate() {
                    *slot += ratio(o.nested[mi][i], o.nested_sizes[i]) / n;
                }
            }
            MethodSummary {
                label: m.label().to_string(),
                violations,
                violation_rate: violations as f64 / n,
                ci: clopper_pearson(violations, reps, 0.95),
                mean_nested_bound: mean,
            }
        })
        .collect();
    Ok(ExperimentResult {
        reps,
        seed,
        replication_seeds: seeds,
        methods: summaries,
        mean_true_fdp,
        mean_nested_size,
    })
}

/// Mean bounds on the nested sets only.
pub fn comparison_experiment(
    scenario: &dyn Scenario,
    methods: &[Box<dyn BoundMethod>],
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<ExperimentResult> {
    let queries = QueryPlan {
        nested: true,
        random_subsets: 0,
    };
    coverage_experiment(scenario, methods, reps, seed, &queries, exec)
}

/// Writes `i, mean |R_i|, mean true FDP, mean bound per method`.
pub fn write_comparison_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["i".to_string(), "size".into(), "true_fdp".into()];
    header.extend(result.methods.iter().map(|m| m.label.clone()));
    w.write_record(&header)?;
    for i in 0..result.mean_true_fdp.len() {
        let mut row = vec![
            (i + 1).to_string(),
            format!("{:.6}", result.mean_nested_size[i]),
            format!("{:.6}", result.mean_true_fdp[i]),
        ];
        row.extend(result.methods.iter().map(|m| format!("{:.6}", m.mean_nested_bound[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Nested-set false-discovery bounds of one method on one draw.
pub fn nested_bounds(method: &dyn BoundMethod, stats: &PreparedStats) -> Result<Vec<u64>> {
    stats.nested_sets().iter().map(|r| method.false_discoveries(stats, r)).collect()
}

/// Parses `a:b` (inclusive), `a,b,c` or a mix such as `1:3,7`.
pub fn parse_range_list(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("`{s}` is not a nonnegative integer")))
        };
        match part.split_once(':') {
            Some((a, b)) => out.extend(num(a)?..=num(b)?),
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
