use std::io::{Read, Write};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use kfdp_cli::ops::{self, BoundQuery, CtParams};
use kfdp_cli::service::{router, AppState};
use kfdp::{PreparedStats, RawStats};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn app() -> axum::Router {
    router(Arc::new(AppState::new(None)))
}

async fn upload(app: &axum::Router, entries: Value) -> String {
    let (status, body) = call(app, "POST", "/stats", Some(json!({ "entries": entries }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session"].as_str().unwrap().to_string()
}

fn example() -> Value {
    json!([
        {"id": "a", "w": 5}, {"id": "b", "w": -4}, {"id": "c", "w": 3},
        {"id": "d", "w": 2}, {"id": "e", "w": -1}, {"id": "z", "w": 0}
    ])
}

fn manual_plan(p: usize) -> Value {
    json!({"alpha": 0.05, "p": p, "v": [1], "k": [2], "family": "manual",
           "certificate": {"prob": 0.95, "nsim": null, "seed": null}})
}

#[tokio::test]
async fn health() {
    let (status, body) = call(&app(), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn upload_summary() {
    let app = app();
    let (status, body) = call(&app, "POST", "/stats", Some(json!({ "entries": example() }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["p"], 5);
    assert_eq!(body["positives"], 3);
    assert_eq!(body["negatives"], 2);
    assert_eq!(body["dropped_zeros"], 1);
    let (status, _) = call(&app, "POST", "/stats", Some(json!({ "values": [1.0, -2.0] }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", "/stats", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn kji_bound_on_the_worked_example() {
    let app = app();
    let session = upload(&app, example()).await;
    let (status, body) = call(&app, "POST", "/plans", Some(json!({"session": session, "name": "m", "plan": manual_plan(5)}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let query = json!({"session": session, "method": "kji", "plan": "m", "ids": ["a", "c", "d"]});
    let (status, body) = call(&app, "POST", "/bound", Some(query.clone())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["fdp_upper"]["numerator"], 3);
    assert_eq!(body["fdp_upper"]["denominator"], 3);
    assert_eq!(body["true_discoveries_lower"], 0);
    assert_eq!(body["certificate"]["prob"], 0.95);
    // Pure queries: the same request gives the same report.
    let (_, again) = call(&app, "POST", "/bound", Some(query)).await;
    assert_eq!(body, again);
    let (_, info) = call(&app, "GET", &format!("/sessions/{session}"), None).await;
    assert_eq!(info["audit"].as_array().unwrap().len(), 2);
    assert_eq!(info["audit"][0]["fdp_upper"], "3/3");
    assert_eq!(info["audit"][0]["certificate"]["prob"], 0.95);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    let (status, body) = call(&app, "POST", "/bound", Some(json!({"session": "nope", "method": "kr", "ids": []}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/nested-curve?session=nope&method=kr", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn horizon_mismatch_is_409() {
    let app = app();
    let session = upload(&app, example()).await;
    let (status, body) = call(&app, "POST", "/plans", Some(json!({"session": session, "name": "m", "plan": manual_plan(6)}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("p=6"));
}

#[tokio::test]
async fn dropped_zero_id_is_named() {
    let app = app();
    let session = upload(&app, example()).await;
    let (status, body) = call(&app, "POST", "/bound", Some(json!({"session": session, "method": "kr", "ids": ["a", "z"]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let msg = body["error"].as_str().unwrap();
    assert!(msg.contains("`z`") && msg.contains("zero"), "{msg}");
}

#[tokio::test]
async fn kr_curve_on_all_positive_statistics() {
    let app = app();
    let p = 12;
    let entries: Vec<Value> = (0..p).map(|i| json!({"id": i, "w": (p - i) as f64})).collect();
    let session = upload(&app, Value::Array(entries)).await;
    let (status, body) = call(&app, "GET", &format!("/nested-curve?session={session}&method=kr&alpha=0.05"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    // With |Ŝ_i| = i the only budget is floor(c) = floor(ln 20 / ln 1.95) = 4.
    let c_floor = ((20f64).ln() / (1.95f64).ln()).floor() as u64;
    assert_eq!(c_floor, 4);
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), p);
    for pt in points {
        let i = pt["i"].as_u64().unwrap();
        assert_eq!(pt["size"].as_u64().unwrap(), i);
        assert_eq!(pt["bound"]["numerator"].as_u64().unwrap(), c_floor.min(i), "i={i}");
        assert_eq!(pt["bound"]["denominator"].as_u64().unwrap(), i);
        assert!((pt["fdp_hat"].as_f64().unwrap() - 1.0 / i as f64).abs() < 1e-12);
    }
    assert_eq!(body["certificate"]["exact"], true);
}

#[tokio::test]
async fn calibrated_plan_matches_library_and_closed_testing() {
    let app = app();
    let signs = [1, 1, 1, -1, 1, 1, -1, 1, 1, -1, 1, -1, -1, 1, 1, -1, 1, -1, -1, 1];
    let values: Vec<f64> = signs.iter().enumerate().map(|(i, &s)| (s * (20 - i as i32)) as f64).collect();
    let (_, up) = call(&app, "POST", "/stats", Some(json!({ "values": values }))).await;
    let session = up["session"].as_str().unwrap().to_string();
    let calib = json!({"family": "B", "alpha": 0.1, "nsim": 20000, "seed": 5});
    let (status, plan) = call(&app, "POST", "/plans", Some(json!({"session": session, "name": "b", "calibrate": calib}))).await;
    assert_eq!(status, StatusCode::OK, "{plan}");
    assert_eq!(plan["plan"]["certificate"]["nsim"], 20000);

    let ids = json!(["1", "2", "3", "5", "6", "8", "9", "11", "14"]);
    let (_, served) = call(&app, "POST", "/bound", Some(json!({"session": session, "method": "kji", "plan": "b", "ids": ids}))).await;

    // The same numbers straight from the library.
    let stats = PreparedStats::prepare(&RawStats::from_values(&values).unwrap(), Default::default(), None).unwrap();
    let params = ops::CalibrateParams {
        alpha: 0.1,
        nsim: 20000,
        seed: 5,
        ..Default::default()
    };
    let (local_plan, _) = ops::calibrate(&params, 20).unwrap();
    let id_list: Vec<String> = ids.as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let local = ops::bound(&stats, &BoundQuery::Kji(local_plan), &id_list).unwrap();
    assert_eq!(served["fdp_upper"], serde_json::to_value(local.report.fdp_upper).unwrap());

    // The plan's indicator translation closes to the same bound.
    let (status, ct) = call(&app, "POST", "/ct-bound", Some(json!({"session": session, "plan": "b", "ids": ids}))).await;
    assert_eq!(status, StatusCode::OK, "{ct}");
    assert_eq!(ct["fdp_upper"], served["fdp_upper"]);
    assert_eq!(ct["certificate"], plan["plan"]["certificate"]);
}

#[tokio::test]
async fn warm_up_fills_the_session_cache() {
    let app = app();
    let values: Vec<f64> = (0..16).map(|i| if i % 3 == 2 { -(16.0 - i as f64) } else { 16.0 - i as f64 }).collect();
    let (_, up) = call(&app, "POST", "/stats", Some(json!({ "values": values }))).await;
    let session = up["session"].as_str().unwrap().to_string();
    let params = json!({"session": session, "weights": "indicator", "v_family": "B", "nsim": 20000, "seed": 2});
    let (status, warm) = call(&app, "POST", "/warm-up", Some(params)).await;
    assert_eq!(status, StatusCode::OK, "{warm}");
    assert_eq!(warm["sizes_built"], 16);

    let query = json!({"session": session, "weights": "indicator", "v_family": "B", "nsim": 20000, "seed": 2,
                       "ids": ["1", "2", "4", "5", "7"]});
    let (status, ct) = call(&app, "POST", "/ct-bound", Some(query)).await;
    assert_eq!(status, StatusCode::OK, "{ct}");
    assert_eq!(ct["calibrated_sizes"], 16);
    assert!(ct["min_certified_prob"].as_f64().unwrap() >= 0.95);
    let (_, info) = call(&app, "GET", &format!("/sessions/{session}"), None).await;
    assert_eq!(info["cached_specs"].as_array().unwrap().len(), 1);

    // Matches a spec built outside the service.
    let stats = PreparedStats::prepare(&RawStats::from_values(&values).unwrap(), Default::default(), None).unwrap();
    let spec = CtParams {
        nsim: 20000,
        seed: 2,
        ..Default::default()
    }
    .build(16, None)
    .unwrap();
    let ids: Vec<String> = ["1", "2", "4", "5", "7"].iter().map(|s| s.to_string()).collect();
    let local = ops::ct_bound(&stats, &spec, &ids, false).unwrap();
    assert_eq!(ct["t_bound"], local.outcome.t_bound);

    let (status, curve) = call(&app, "GET", &format!("/nested-curve?session={session}&method=ct&nsim=20000&seed=2"), None).await;
    assert_eq!(status, StatusCode::OK, "{curve}");
    assert_eq!(curve["points"].as_array().unwrap().len(), 16);
}

#[tokio::test]
async fn data_dir_files_stay_inside() {
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("service_data");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("w.csv"), "id,w\na,5\nb,-4\nc,3\n").unwrap();
    let app = router(Arc::new(AppState::new(Some(dir))));
    let (status, body) = call(&app, "POST", "/stats", Some(json!({"file": "w.csv"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["p"], 3);
    let (status, _) = call(&app, "POST", "/stats", Some(json!({"file": "../w.csv"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&self::app(), "POST", "/stats", Some(json!({"file": "w.csv"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn serves_over_tcp() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(kfdp_cli::service::serve(listener, None));
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    stream
        .write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));
}
