use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use eaef_cli::config::ServiceConfig;
use eaef_cli::service::{router, ApiError, AppState, ChatResponse, ErrorCode, Health, QueryResponse, ScoreResponse};
use eaef_core::generation::{AssembledPrompt, BackendReply, GenerationError, LlmBackend, PromptBundle};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn config(dir: &Path) -> ServiceConfig {
    let text = json!({
        "index": dir.join("svc.idx"),
        "lexicons": fixtures().join("lexicons"),
        "calibration": fixtures().join("calibration.json"),
        "provider": {"kind": "deterministic_hash", "dimension": 64, "seed": 3},
    });
    let path = dir.join("service.json");
    std::fs::write(&path, text.to_string()).unwrap();
    ServiceConfig::load(&path).unwrap()
}

fn app(dir: &Path) -> axum::Router {
    router(Arc::new(AppState::new(config(dir)).unwrap()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn assert_api_error(status: StatusCode, body: &Value, code: ErrorCode) {
    assert!(!status.is_success());
    let err: ApiError = serde_json::from_value(body.clone()).expect("error body is an ApiError");
    assert_eq!(err.code, code, "{body}");
    assert!(uuid::Uuid::parse_str(&err.correlation_id).is_ok());
}

fn write_manifest(dir: &Path, sessions: &[&str]) -> PathBuf {
    let mut names = Vec::new();
    for (i, body) in sessions.iter().enumerate() {
        let name = format!("t{i}.txt");
        std::fs::write(dir.join(&name), body).unwrap();
        names.push(name);
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string(&names).unwrap()).unwrap();
    path
}

async fn ingest_fixtures(app: &axum::Router) -> Value {
    let manifest = fixtures().join("transcripts/manifest.json");
    let (status, body) = call(app, "POST", "/ingest", Some(json!({"manifest_path": manifest}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn ingest_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let empty = write_manifest(dir.path(), &[]);
    let (status, body) = call(&app, "POST", "/ingest", Some(json!({"manifest_path": empty}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"segments_indexed": 0, "sessions": 0}));

    let one = write_manifest(
        dir.path(),
        &["CLIENT: I feel anxious. Work is hard. I cannot sleep.\n"],
    );
    let (_, first) = call(&app, "POST", "/ingest", Some(json!({"manifest_path": one}))).await;
    assert_eq!(first, json!({"segments_indexed": 4, "sessions": 1}));
    let (_, h1) = call(&app, "GET", "/health", None).await;
    let (_, second) = call(&app, "POST", "/ingest", Some(json!({"manifest_path": one}))).await;
    let (_, h2) = call(&app, "GET", "/health", None).await;
    assert_eq!(first, second);
    assert_eq!(h1, h2);
    assert!(dir.path().join("svc.idx").is_file());
}

#[tokio::test]
async fn ingest_rejects_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/ingest", Some(json!({"manifest_path": "/nonexistent/m.json"}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
}

#[tokio::test]
async fn query_before_ingest_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/query", Some(json!({"text": "anxious"}))).await;
    assert_api_error(status, &body, ErrorCode::NotFound);
    let (status, body) = call(&app, "POST", "/score", Some(json!({"responses": ["ok"]}))).await;
    assert_api_error(status, &body, ErrorCode::NotFound);
}

#[tokio::test]
async fn query_validation_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    ingest_fixtures(&app).await;

    let (status, body) = call(&app, "POST", "/query", Some(json!({"text": "anxious", "k": 0}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
    let (status, body) = call(&app, "POST", "/query", Some(json!({"text": "   "}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
    let (status, body) = call(&app, "POST", "/query", Some(json!({"text": "x", "level": "chapter"}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
    let (status, body) = call(&app, "POST", "/query", Some(json!({"k": 3}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);

    let (status, body) = call(&app, "POST", "/query", Some(json!({"text": "anxious", "tau": 1.1}))).await;
    assert_eq!(status, StatusCode::OK);
    let r: QueryResponse = serde_json::from_value(body).unwrap();
    assert!(r.hits.is_empty());

    let (status, body) = call(
        &app,
        "POST",
        "/query",
        Some(json!({"text": "I feel anxious about my job", "k": 3, "unexpected": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let r: QueryResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.hits.len(), 3);
    assert!(r.hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(r.affect.fear > 0.0);

    let (_, body) = call(&app, "POST", "/query", Some(json!({"text": "job", "level": "session", "k": 50}))).await;
    let r: QueryResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.hits.len(), 6);
    assert!(r.hits.iter().all(|h| h.level == eaef_core::Level::Session));
}

#[tokio::test]
async fn query_overrides_change_enrichment() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    ingest_fixtures(&app).await;
    let q = |extra: Value| {
        let mut body = json!({"text": "I feel anxious and afraid", "k": 5, "level": "any"});
        body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        body
    };
    let (_, a) = call(&app, "POST", "/query", Some(q(json!({})))).await;
    let (_, b) = call(&app, "POST", "/query", Some(q(json!({"lambda": 0.0})))).await;
    let (_, c) = call(
        &app,
        "POST",
        "/query",
        Some(q(json!({"toggles": {"nrc": false, "vader": false, "wordnet_syn": false, "sentiwordnet": false}}))),
    )
    .await;
    let sims = |v: &Value| -> Vec<f64> {
        let r: QueryResponse = serde_json::from_value(v.clone()).unwrap();
        r.hits.iter().map(|h| h.similarity).collect()
    };
    assert_ne!(sims(&a), sims(&b));
    assert_eq!(sims(&b), sims(&c));
}

#[tokio::test]
async fn chat_returns_scores_and_bounded_hits() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    ingest_fixtures(&app).await;
    for turn in 0..3 {
        let (status, body) = call(
            &app,
            "POST",
            "/chat",
            Some(json!({"session_id": "s", "message": format!("I still feel anxious {turn}"), "k": 2, "affect_in_prompt": true})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let r: ChatResponse = serde_json::from_value(body).unwrap();
        assert_eq!(r.session_id, "s");
        assert!(r.hits.len() <= 2);
        assert_eq!(r.response.retrieved_ids.len(), r.hits.len());
        assert!(r.response.text.starts_with("MOCK|top="));
        for s in [r.scores.empathy, r.scores.coherence, r.scores.informativeness, r.scores.fluency, r.scores.overall] {
            assert!((1.0..=5.0).contains(&s), "{s}");
        }
    }
    let (status, body) = call(&app, "POST", "/chat", Some(json!({"session_id": "s", "message": ""}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
}

struct DownBackend;

impl LlmBackend for DownBackend {
    fn id(&self) -> String {
        "down".into()
    }

    fn complete(&self, _: &PromptBundle, prompt: &AssembledPrompt) -> Result<BackendReply, GenerationError> {
        Err(GenerationError::Backend {
            backend: self.id(),
            attempts: 3,
            message: "connection refused".into(),
            prompt: prompt.render(),
        })
    }
}

#[tokio::test]
async fn chat_maps_backend_failure_to_503() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(config(dir.path())).unwrap().with_backend(Arc::new(DownBackend));
    let app = router(Arc::new(state));
    ingest_fixtures(&app).await;
    let (status, body) = call(&app, "POST", "/chat", Some(json!({"session_id": "x", "message": "hello"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_api_error(status, &body, ErrorCode::BackendUnavailable);
}

#[tokio::test]
async fn score_averages_per_response_scores() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    ingest_fixtures(&app).await;
    let responses = ["I hear how anxious you feel.", "Sleep matters. Walking helps."];
    let (status, body) = call(&app, "POST", "/score", Some(json!({"responses": responses}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let r: ScoreResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.scores.len(), 2);
    let mean = |f: fn(&eaef_core::QualityScores) -> f64| (f(&r.scores[0]) + f(&r.scores[1])) / 2.0;
    assert!((r.average.empathy - mean(|s| s.empathy)).abs() < 1e-12);
    assert!((r.average.fluency - mean(|s| s.fluency)).abs() < 1e-12);
    assert!((r.average.overall - mean(|s| s.overall)).abs() < 1e-12);

    let (status, body) = call(&app, "POST", "/score", Some(json!({"responses": []}))).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
}

#[tokio::test]
async fn health_reports_index_state() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_value(body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.segments, 0);
    assert!(h.index_fingerprint.is_none());

    let stats = ingest_fixtures(&app).await;
    let (_, body) = call(&app, "GET", "/health", None).await;
    let h: Health = serde_json::from_value(body).unwrap();
    assert_eq!(h.segments as u64, stats["segments_indexed"].as_u64().unwrap());
    assert!(h.index_fingerprint.is_some());

    // A fresh state over the same config reopens the saved index.
    let reopened = router(Arc::new(AppState::new(config(dir.path())).unwrap()));
    let (_, again) = call(&reopened, "GET", "/health", None).await;
    assert_eq!(serde_json::to_value(&h).unwrap(), again);
}

#[tokio::test]
async fn malformed_and_unknown_requests_are_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = Request::builder()
        .method("POST")
        .uri("/query")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_api_error(status, &serde_json::from_slice(&bytes).unwrap(), ErrorCode::BadRequest);

    let (status, body) = call(&app, "GET", "/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_api_error(status, &body, ErrorCode::NotFound);
    let (status, body) = call(&app, "GET", "/query", None).await;
    assert_api_error(status, &body, ErrorCode::BadRequest);
}

#[test]
fn startup_fails_on_missing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.lexicons = dir.path().join("missing");
    assert!(AppState::new(cfg).is_err());
    let mut cfg = config(dir.path());
    cfg.index = dir.path().join("no/such/dir/x.idx");
    assert!(AppState::new(cfg).is_err());
}
