//! Query logic shared by the command line and the service, so both surfaces
//! return identical numbers for identical inputs.

use std::sync::Arc;

use kfdp::bounds::{js_bound, kji_bound, kji_nested_curve, kr_bound};
use kfdp::calibration::{two_step_k_traced, VFamily, VKind};
use kfdp::closed_testing::{BruteForceCt, Shortcut};
use kfdp::sim::MethodContext;
use kfdp::{BoundReport, Certificate, CtOutcome, FdpBound, IndexSet, LocalTestSpec, PreparedStats, SignPathPool, VKPlan};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_NSIM: usize = 100_000;
pub const DEFAULT_SEED: u64 = 7;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_nsim() -> usize {
    DEFAULT_NSIM
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_family() -> String {
    "B".into()
}

fn default_weights() -> String {
    "indicator".into()
}

/// Settings for calibrating a plan on a fresh pool.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateParams {
    /// `A`, `B`, `C` or `D`; ignored when `v` is given.
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub v: Option<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Exclusive cap on `v`; defaults to `p / 3 + 1`.
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_nsim")]
    pub nsim: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for CalibrateParams {
    fn default() -> Self {
        Self {
            family: default_family(),
            v: None,
            alpha: DEFAULT_ALPHA,
            cap: None,
            delta: DEFAULT_DELTA,
            nsim: DEFAULT_NSIM,
            seed: DEFAULT_SEED,
        }
    }
}

impl CalibrateParams {
    pub fn v_family(&self, p: usize) -> kfdp::Result<VFamily> {
        match &self.v {
            Some(v) => Ok(VFamily::explicit(v.clone())),
            None => Ok(VFamily::new(
                self.family.parse::<VKind>()?,
                self.cap.unwrap_or_else(|| MethodContext::default_cap(p)),
            )),
        }
    }
}

/// Intermediate vectors reported next to a calibrated plan.
#[derive(Clone, Debug, Serialize)]
pub struct CalibrationTrace {
    pub k_raw: Vec<u64>,
    pub prob_raw: f64,
    pub step1_steps: u64,
    pub k_step1: Vec<u64>,
    pub prob_step1: f64,
    pub clamp_binds: usize,
}

pub fn calibrate(params: &CalibrateParams, p: usize) -> kfdp::Result<(VKPlan, CalibrationTrace)> {
    let family = params.v_family(p)?;
    let pool = SignPathPool::build(params.nsim, p, params.seed);
    let trace = two_step_k_traced(&family.values(), params.alpha, params.delta, p, &pool)?;
    let mut plan = trace.plan;
    if params.v.is_none() {
        plan.family = family.kind.to_string();
    }
    let summary = CalibrationTrace {
        k_raw: trace.k_raw,
        prob_raw: trace.prob_raw,
        step1_steps: trace.step1_steps,
        k_step1: trace.k_step1,
        prob_step1: trace.prob_step1,
        clamp_binds: trace.clamp_binds,
    };
    Ok((plan, summary))
}

/// A simultaneous interpolation bound to evaluate.
#[derive(Clone, Debug)]
pub enum BoundQuery {
    Js { k: u64, alpha: f64 },
    Kji(VKPlan),
    Kr { alpha: f64 },
}

impl BoundQuery {
    pub fn evaluate(&self, stats: &PreparedStats, r: &IndexSet) -> kfdp::Result<BoundReport> {
        match self {
            BoundQuery::Js { k, alpha } => js_bound(stats, *k, *alpha, r),
            BoundQuery::Kji(plan) => kji_bound(stats, plan, r),
            BoundQuery::Kr { alpha } => Ok(kr_bound(stats, *alpha, r)),
        }
    }

    pub fn certificate(&self, p: usize) -> kfdp::Result<Certificate> {
        Ok(match self {
            BoundQuery::Js { k, alpha } => VKPlan::js(*k, *alpha, p)?.certificate,
            BoundQuery::Kji(plan) => plan.certificate.clone(),
            BoundQuery::Kr { alpha } => Certificate::exact(1.0 - alpha),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            BoundQuery::Js { .. } => "js",
            BoundQuery::Kji(_) => "kji",
            BoundQuery::Kr { .. } => "kr",
        }
    }
}

/// A bound report with the query written as original ids.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReply {
    pub ids: Vec<String>,
    #[serde(flatten)]
    pub report: BoundReport,
}

impl BoundReply {
    pub fn new(report: BoundReport, stats: &PreparedStats) -> Self {
        Self {
            ids: ids_of(&report.query, stats),
            report,
        }
    }
}

pub fn ids_of(set: &IndexSet, stats: &PreparedStats) -> Vec<String> {
    set.ids(stats).into_iter().map(str::to_string).collect()
}

pub fn bound(stats: &PreparedStats, query: &BoundQuery, ids: &[String]) -> kfdp::Result<BoundReply> {
    let r = stats.resolve_ids(ids)?;
    Ok(BoundReply::new(query.evaluate(stats, &r)?, stats))
}

/// Closed-testing settings. `weights` is `indicator`, `rank` or `kr`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CtParams {
    #[serde(default = "default_weights")]
    pub weights: String,
    #[serde(default = "default_family")]
    pub v_family: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default = "default_nsim")]
    pub nsim: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for CtParams {
    fn default() -> Self {
        Self {
            weights: default_weights(),
            v_family: default_family(),
            alpha: DEFAULT_ALPHA,
            delta: DEFAULT_DELTA,
            cap: None,
            nsim: DEFAULT_NSIM,
            seed: DEFAULT_SEED,
        }
    }
}

impl CtParams {
    /// Key under which a built spec may be reused for the same statistics.
    pub fn cache_key(&self, plan: Option<&str>) -> String {
        match (self.weights.to_ascii_lowercase().as_str(), plan) {
            ("kr", _) => format!("kr|{}", self.alpha),
            ("indicator", Some(name)) => format!("plan|{name}"),
            (w, Some(name)) => format!("{w}|plan:{name}|{}|{}|{}|{}", self.alpha, self.delta, self.nsim, self.seed),
            (w, None) => format!(
                "{w}|{}|{:?}|{}|{}|{}|{}",
                self.v_family.to_ascii_uppercase(),
                self.cap,
                self.alpha,
                self.delta,
                self.nsim,
                self.seed
            ),
        }
    }

    /// Builds the local test family. With a plan, `indicator` is its direct
    /// translation and `rank` reuses its `v`.
    pub fn build(&self, p: usize, plan: Option<&VKPlan>) -> kfdp::Result<LocalTestSpec> {
        let pool = || Arc::new(SignPathPool::build(self.nsim, p, self.seed));
        let weights = self.weights.to_ascii_lowercase();
        if weights == "kr" {
            return LocalTestSpec::kr(self.alpha, p);
        }
        if let Some(plan) = plan {
            if plan.horizon_p != p {
                return Err(kfdp::Error::PlanMismatch {
                    plan_p: plan.horizon_p,
                    stats_p: p,
                });
            }
        }
        let v = match plan {
            Some(plan) => plan.v.clone(),
            None => {
                let cap = self.cap.unwrap_or_else(|| MethodContext::default_cap(p));
                VFamily::new(self.v_family.parse::<VKind>()?, cap).values()
            }
        };
        match (weights.as_str(), plan) {
            ("indicator", Some(plan)) => LocalTestSpec::from_plan(plan),
            ("indicator", None) => LocalTestSpec::kct(&v, self.alpha, self.delta, p, pool()),
            ("rank", _) => LocalTestSpec::rank(&v, self.alpha, self.delta, p, pool()),
            (other, _) => Err(kfdp::Error::Parse(format!("unknown weights `{other}`"))),
        }
    }
}

/// Brute-force cross-check of a closed-testing result.
#[derive(Clone, Debug, Serialize)]
pub struct OracleCheck {
    pub t_bound: u64,
    pub agrees: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CtReply {
    pub ids: Vec<String>,
    #[serde(flatten)]
    pub outcome: CtOutcome,
    pub true_discoveries_lower: u64,
    pub spec: String,
    /// Certificate of the full-size rule.
    pub certificate: Option<Certificate>,
    /// Size rules built so far, and the smallest certified probability among them.
    pub calibrated_sizes: usize,
    pub min_certified_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
}

pub fn ct_bound(stats: &PreparedStats, spec: &LocalTestSpec, ids: &[String], oracle: bool) -> kfdp::Result<CtReply> {
    let r = stats.resolve_ids(ids)?;
    let outcome = Shortcut::new(stats, spec)?.bound(&r)?;
    let oracle = if oracle {
        let t_bound = BruteForceCt::new(stats, spec)?.t_bound(&r);
        Some(OracleCheck {
            t_bound,
            agrees: t_bound == outcome.t_bound,
        })
    } else {
        None
    };
    Ok(ct_reply(stats, spec, outcome, oracle))
}

fn ct_reply(stats: &PreparedStats, spec: &LocalTestSpec, outcome: CtOutcome, oracle: Option<OracleCheck>) -> CtReply {
    let certificate = spec.rule(stats.p()).certificate.clone();
    let built = spec.built_rules();
    let min_certified_prob = built
        .iter()
        .filter_map(|(_, r)| r.certificate.as_ref().map(|c| c.prob))
        .reduce(f64::min);
    CtReply {
        ids: ids_of(&outcome.query, stats),
        true_discoveries_lower: outcome.true_discoveries_lower(),
        outcome,
        spec: spec.label().to_string(),
        certificate,
        calibrated_sizes: built.len(),
        min_certified_prob,
        oracle,
    }
}

/// One point of a nested-set curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub i: usize,
    pub size: usize,
    pub fdp_hat: f64,
    pub bound: FdpBound,
}

#[derive(Clone, Debug, Serialize)]
pub struct Curve {
    pub method: String,
    pub certificate: Option<Certificate>,
    pub points: Vec<CurvePoint>,
}

fn curve_points(stats: &PreparedStats, bounds: Vec<FdpBound>) -> Vec<CurvePoint> {
    stats
        .nested_sizes()
        .into_iter()
        .zip(bounds)
        .enumerate()
        .map(|(j, (size, bound))| CurvePoint {
            i: j + 1,
            size,
            fdp_hat: stats.fdp_hat(j + 1),
            bound,
        })
        .collect()
}

pub fn bound_curve(stats: &PreparedStats, query: &BoundQuery) -> kfdp::Result<Curve> {
    let bounds = match query {
        BoundQuery::Kji(plan) => kji_nested_curve(stats, plan)?,
        other => stats
            .nested_sets()
            .iter()
            .map(|r| other.evaluate(stats, r).map(|b| b.fdp_upper))
            .collect::<kfdp::Result<_>>()?,
    };
    Ok(Curve {
        method: query.label().into(),
        certificate: Some(query.certificate(stats.p())?),
        points: curve_points(stats, bounds),
    })
}

pub fn ct_curve(stats: &PreparedStats, spec: &LocalTestSpec) -> kfdp::Result<Curve> {
    let shortcut = Shortcut::new(stats, spec)?;
    let bounds = stats
        .nested_sets()
        .iter()
        .map(|r| shortcut.bound(r).map(|o| o.fdp_upper))
        .collect::<kfdp::Result<_>>()?;
    Ok(Curve {
        method: format!("ct-{}", spec.label()),
        certificate: spec.rule(stats.p()).certificate.clone(),
        points: curve_points(stats, bounds),
    })
}

/// Renders a JSON id as the label it names: strings verbatim, numbers as written.
pub fn id_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
