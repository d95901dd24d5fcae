//! Local HTTP/JSON query service.
//!
//! Each session owns one immutable [`PreparedStats`]. Named plans and
//! closed-testing specs are cached per session. Size rules inside a spec are
//! built on first use under their own locks. Sessions share no mutable state.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kfdp::io::{read_stats_json, read_stats_path};
use kfdp::{Certificate, LocalTestSpec, PreparedStats, RawStats, TieBreak, VKPlan};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ops::{self, BoundQuery, BoundReply, CalibrateParams, CtParams, CtReply, Curve, DEFAULT_ALPHA};

/// Error with the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<kfdp::Error> for ApiError {
    fn from(e: kfdp::Error) -> Self {
        use kfdp::Error as E;
        let status = match &e {
            E::PlanMismatch { .. } => StatusCode::CONFLICT,
            E::UnknownId { .. } | E::DroppedId { .. } | E::DuplicateId { .. } | E::PositionOutOfRange { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "status": self.status.as_u16() });
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

/// One answered query.
#[derive(Clone, Debug, Serialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub endpoint: String,
    pub method: String,
    pub ids: Vec<String>,
    pub fdp_upper: String,
    pub certificate: Option<Certificate>,
}

pub struct Session {
    pub id: String,
    stats: Arc<PreparedStats>,
    plans: RwLock<BTreeMap<String, VKPlan>>,
    specs: Mutex<HashMap<String, Arc<LocalTestSpec>>>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl Session {
    fn new(id: String, stats: PreparedStats) -> Self {
        Self {
            id,
            stats: Arc::new(stats),
            plans: RwLock::new(BTreeMap::new()),
            specs: Mutex::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn stats(&self) -> &PreparedStats {
        &self.stats
    }

    fn plan(&self, name: &str) -> ApiResult<VKPlan> {
        self.plans
            .read()
            .expect("plan lock")
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown plan `{name}` in session {}", self.id)))
    }

    /// Spec for `params`, built once per session and key.
    fn spec(&self, params: &CtParams, plan: Option<&str>) -> ApiResult<Arc<LocalTestSpec>> {
        let plan = plan.map(|n| self.plan(n).map(|p| (n, p))).transpose()?;
        let key = params.cache_key(plan.as_ref().map(|(n, _)| *n));
        let mut specs = self.specs.lock().expect("spec lock");
        if let Some(spec) = specs.get(&key) {
            return Ok(spec.clone());
        }
        let spec = Arc::new(params.build(self.stats.p(), plan.as_ref().map(|(_, p)| p))?);
        specs.insert(key, spec.clone());
        Ok(spec)
    }

    fn record(&self, endpoint: &str, method: &str, ids: Vec<String>, fdp_upper: String, certificate: Option<Certificate>) {
        let mut audit = self.audit.lock().expect("audit lock");
        let seq = audit.len() + 1;
        audit.push(AuditEntry {
            seq,
            endpoint: endpoint.into(),
            method: method.into(),
            ids,
            fdp_upper,
            certificate,
        });
    }

    fn summary(&self) -> StatsSummary {
        StatsSummary {
            session: self.id.clone(),
            p: self.stats.p(),
            positives: self.stats.positive_count(),
            negatives: self.stats.negative_count(),
            dropped_zeros: self.stats.dropped_zero_count(),
            tie_break: self.stats.tie_break(),
        }
    }
}

/// Shared state behind the router.
#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    data_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StatsSummary {
    pub session: String,
    pub p: usize,
    pub positives: usize,
    pub negatives: usize,
    pub dropped_zeros: usize,
    pub tie_break: TieBreak,
}

/// `entries` (array of `{id, w}`), `values` (ids `1..`) or `file` under the
/// data directory.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct StatsUpload {
    #[serde(default)]
    pub entries: Option<Value>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub tie_seed: Option<u64>,
}

/// Registers a plan: uploaded inline, read from the data directory, or
/// calibrated at the session's horizon.
#[derive(Clone, Debug, Deserialize)]
pub struct PlanRequest {
    pub session: String,
    pub name: String,
    #[serde(default)]
    pub plan: Option<VKPlan>,
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub calibrate: Option<CalibrateParams>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReply {
    pub session: String,
    pub name: String,
    pub plan: VKPlan,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<ops::CalibrationTrace>,
}

/// `method` is `js` (needs `k`), `kji` (needs `plan`) or `kr`.
#[derive(Clone, Debug, Deserialize)]
pub struct BoundRequest {
    pub session: String,
    pub method: String,
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub ids: Vec<Value>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionBoundReply {
    pub session: String,
    #[serde(flatten)]
    pub reply: BoundReply,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CtRequest {
    pub session: String,
    pub ids: Vec<Value>,
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(flatten)]
    pub params: CtParams,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionCtReply {
    pub session: String,
    #[serde(flatten)]
    pub reply: CtReply,
}

/// Query string of `GET /nested-curve`. `method` is `js`, `kji`, `kr` or
/// `ct`; the closed-testing fields apply to `ct` only.
#[derive(Clone, Debug, Deserialize)]
pub struct CurveRequest {
    pub session: String,
    pub method: String,
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(default)]
    pub k: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub weights: Option<String>,
    #[serde(default)]
    pub v_family: Option<String>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default)]
    pub nsim: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CurveRequest {
    fn ct_params(&self) -> CtParams {
        let d = CtParams::default();
        CtParams {
            weights: self.weights.clone().unwrap_or(d.weights),
            v_family: self.v_family.clone().unwrap_or(d.v_family),
            alpha: self.alpha.unwrap_or(d.alpha),
            delta: self.delta.unwrap_or(d.delta),
            cap: self.cap.or(d.cap),
            nsim: self.nsim.unwrap_or(d.nsim),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionCurve {
    pub session: String,
    #[serde(flatten)]
    pub curve: Curve,
}

#[derive(Clone, Debug, Deserialize)]
pub struct WarmUpRequest {
    pub session: String,
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(flatten)]
    pub params: CtParams,
}

#[derive(Clone, Debug, Serialize)]
pub struct WarmUpReply {
    pub session: String,
    pub spec: String,
    pub sizes_built: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionInfo {
    #[serde(flatten)]
    pub summary: StatsSummary,
    pub plans: BTreeMap<String, VKPlan>,
    pub cached_specs: Vec<String>,
    pub audit: Vec<AuditEntry>,
}

fn ids_from_json(ids: &[Value]) -> Vec<String> {
    ids.iter().map(ops::id_label).collect()
}

/// Joins `file` onto `dir`, refusing absolute paths and `..`.
fn resolve_data_file(dir: Option<&Path>, file: &str) -> ApiResult<PathBuf> {
    let dir = dir.ok_or_else(|| ApiError::bad_request("the service was started without a data directory"))?;
    let rel = Path::new(file);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ApiError::bad_request(format!("`{file}` must be a plain path inside the data directory")));
    }
    Ok(dir.join(rel))
}

impl AppState {
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Self {
            data_dir,
            ..Self::default()
        }
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    pub fn upload_stats(&self, req: StatsUpload) -> ApiResult<StatsSummary> {
        let raw: RawStats = match (req.entries, req.values, req.file) {
            (Some(entries), None, None) => read_stats_json(&entries.to_string())?,
            (None, Some(values), None) => RawStats::from_values(&values)?,
            (None, None, Some(file)) => read_stats_path(&resolve_data_file(self.data_dir.as_deref(), &file)?)?,
            _ => return Err(ApiError::bad_request("give exactly one of `entries`, `values` or `file`")),
        };
        let stats = PreparedStats::prepare(&raw, req.tie_break, req.tie_seed)?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        let session = Arc::new(Session::new(id.clone(), stats));
        let summary = session.summary();
        self.sessions.write().expect("session lock").insert(id, session);
        Ok(summary)
    }

    pub fn add_plan(&self, req: PlanRequest) -> ApiResult<PlanReply> {
        let session = self.session(&req.session)?;
        let p = session.stats.p();
        let (plan, trace) = match (req.plan, req.file, req.calibrate) {
            (Some(plan), None, None) => (plan, None),
            (None, Some(file), None) => {
                let text = std::fs::read_to_string(resolve_data_file(self.data_dir.as_deref(), &file)?)
                    .map_err(kfdp::Error::from)?;
                (serde_json::from_str::<VKPlan>(&text).map_err(kfdp::Error::from)?, None)
            }
            (None, None, Some(params)) => {
                let (plan, trace) = ops::calibrate(&params, p)?;
                (plan, Some(trace))
            }
            _ => return Err(ApiError::bad_request("give exactly one of `plan`, `file` or `calibrate`")),
        };
        plan.validate()?;
        if plan.horizon_p != p {
            return Err(kfdp::Error::PlanMismatch {
                plan_p: plan.horizon_p,
                stats_p: p,
            }
            .into());
        }
        session.plans.write().expect("plan lock").insert(req.name.clone(), plan.clone());
        Ok(PlanReply {
            session: session.id.clone(),
            name: req.name,
            plan,
            trace,
        })
    }

    fn bound_query(session: &Session, method: &str, plan: Option<&str>, k: Option<u64>, alpha: Option<f64>) -> ApiResult<BoundQuery> {
        let alpha = alpha.unwrap_or(DEFAULT_ALPHA);
        match method.to_ascii_lowercase().as_str() {
            "js" => Ok(BoundQuery::Js {
                k: k.ok_or_else(|| ApiError::bad_request("method js needs `k`"))?,
                alpha,
            }),
            "kji" => {
                let name = plan.ok_or_else(|| ApiError::bad_request("method kji needs `plan`"))?;
                Ok(BoundQuery::Kji(session.plan(name)?))
            }
            "kr" => Ok(BoundQuery::Kr { alpha }),
            other => Err(ApiError::bad_request(format!("unknown method `{other}`"))),
        }
    }

    pub fn bound(&self, req: BoundRequest) -> ApiResult<SessionBoundReply> {
        let session = self.session(&req.session)?;
        let query = Self::bound_query(&session, &req.method, req.plan.as_deref(), req.k, req.alpha)?;
        let reply = ops::bound(&session.stats, &query, &ids_from_json(&req.ids))?;
        session.record(
            "bound",
            query.label(),
            reply.ids.clone(),
            reply.report.fdp_upper.to_string(),
            reply.report.certificate.clone(),
        );
        Ok(SessionBoundReply {
            session: session.id.clone(),
            reply,
        })
    }

    pub fn ct_bound(&self, req: CtRequest) -> ApiResult<SessionCtReply> {
        let session = self.session(&req.session)?;
        let spec = session.spec(&req.params, req.plan.as_deref())?;
        let reply = ops::ct_bound(&session.stats, &spec, &ids_from_json(&req.ids), req.oracle)?;
        session.record(
            "ct-bound",
            &format!("ct-{}", spec.label()),
            reply.ids.clone(),
            reply.outcome.fdp_upper.to_string(),
            reply.certificate.clone(),
        );
        Ok(SessionCtReply {
            session: session.id.clone(),
            reply,
        })
    }

    pub fn nested_curve(&self, req: CurveRequest) -> ApiResult<SessionCurve> {
        let session = self.session(&req.session)?;
        let curve = if req.method.eq_ignore_ascii_case("ct") {
            let spec = session.spec(&req.ct_params(), req.plan.as_deref())?;
            ops::ct_curve(&session.stats, &spec)?
        } else {
            let query = Self::bound_query(&session, &req.method, req.plan.as_deref(), req.k, req.alpha)?;
            ops::bound_curve(&session.stats, &query)?
        };
        Ok(SessionCurve {
            session: session.id.clone(),
            curve,
        })
    }

    pub fn warm_up(&self, req: WarmUpRequest) -> ApiResult<WarmUpReply> {
        let session = self.session(&req.session)?;
        let start = Instant::now();
        let spec = session.spec(&req.params, req.plan.as_deref())?;
        spec.warm_up();
        Ok(WarmUpReply {
            session: session.id.clone(),
            spec: spec.label().to_string(),
            sizes_built: spec.built_rules().len(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn info(&self, id: &str) -> ApiResult<SessionInfo> {
        let session = self.session(id)?;
        let mut cached_specs: Vec<String> = session.specs.lock().expect("spec lock").keys().cloned().collect();
        cached_specs.sort();
        let plans = session.plans.read().expect("plan lock").clone();
        let audit = session.audit.lock().expect("audit lock").clone();
        Ok(SessionInfo {
            summary: session.summary(),
            plans,
            cached_specs,
            audit,
        })
    }
}

type Shared = Arc<AppState>;

/// Runs a synchronous handler body off the async workers.
async fn blocking<T, F>(state: Shared, f: F) -> ApiResult<Json<T>>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn post_stats(State(s): State<Shared>, Json(req): Json<StatsUpload>) -> ApiResult<Json<StatsSummary>> {
    blocking(s, move |s| s.upload_stats(req)).await
}

async fn post_plans(State(s): State<Shared>, Json(req): Json<PlanRequest>) -> ApiResult<Json<PlanReply>> {
    blocking(s, move |s| s.add_plan(req)).await
}

async fn post_bound(State(s): State<Shared>, Json(req): Json<BoundRequest>) -> ApiResult<Json<SessionBoundReply>> {
    blocking(s, move |s| s.bound(req)).await
}

async fn post_ct_bound(State(s): State<Shared>, Json(req): Json<CtRequest>) -> ApiResult<Json<SessionCtReply>> {
    blocking(s, move |s| s.ct_bound(req)).await
}

async fn get_curve(State(s): State<Shared>, Query(req): Query<CurveRequest>) -> ApiResult<Json<SessionCurve>> {
    blocking(s, move |s| s.nested_curve(req)).await
}

async fn post_warm_up(State(s): State<Shared>, Json(req): Json<WarmUpRequest>) -> ApiResult<Json<WarmUpReply>> {
    blocking(s, move |s| s.warm_up(req)).await
}

async fn get_session(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    blocking(s, move |s| s.info(&id)).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/stats", post(post_stats))
        .route("/plans", post(post_plans))
        .route("/bound", post(post_bound))
        .route("/ct-bound", post(post_ct_bound))
        .route("/nested-curve", get(get_curve))
        .route("/warm-up", post(post_warm_up))
        .route("/sessions/{id}", get(get_session))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, data_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(AppState::new(data_dir)))).await
}

pub fn bind_address(host: &str, port: u16) -> std::io::Result<SocketAddr> {
    use std::net::ToSocketAddrs;
    (host, port)
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("cannot resolve `{host}`")))
}
