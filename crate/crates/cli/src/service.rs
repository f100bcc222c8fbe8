//! HTTP/JSON front end: ingest, query, chat, score, health.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use eaef_core::embedding::SegmentEncoder;
use eaef_core::generation::{
    chat_turn, retrieve, ChatContext, ChatSession, GeneratedResponse, GenerationConfig,
    GenerationError, LlmBackend, RetrievalConfig, DEFAULT_HISTORY_WINDOW,
};
use eaef_core::metrics::MetricsError;
use eaef_core::pipeline::{read_manifest, Engine, EngineConfig, IngestStats};
use eaef_core::vecstore::VecStoreError;
use eaef_core::{
    AffectVector, Calibration, DocRecord, Level, LexiconToggles, Lexicons, QualityScores, SearchHit,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use crate::config::ServiceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    BackendUnavailable,
    Internal,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::BackendUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub correlation_id: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            correlation_id: uuid::Uuid::new_v4().to_string(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::BadRequest, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::NotFound, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.code == ErrorCode::Internal {
            tracing::error!(correlation_id = %self.correlation_id, "{}", self.message);
        } else {
            tracing::warn!(correlation_id = %self.correlation_id, code = ?self.code, "{}", self.message);
        }
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<eaef_core::Error> for ApiError {
    fn from(e: eaef_core::Error) -> Self {
        use eaef_core::Error as E;
        let code = match &e {
            E::Generation(GenerationError::Backend { .. }) => ErrorCode::BackendUnavailable,
            E::Generation(GenerationError::EmptyQuery) => ErrorCode::BadRequest,
            E::Generation(GenerationError::VecStore(v)) | E::VecStore(v) => vecstore_code(v),
            E::Generation(GenerationError::Metrics(MetricsError::Untrained(_)))
            | E::Metrics(MetricsError::Untrained(_)) => ErrorCode::NotFound,
            E::Io { .. } | E::Config { .. } | E::Invalid(_) | E::Lexicon(_) => ErrorCode::BadRequest,
            E::Embedding(inner) if !inner.is_retryable() => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<GenerationError> for ApiError {
    fn from(e: GenerationError) -> Self {
        eaef_core::Error::from(e).into()
    }
}

fn vecstore_code(e: &VecStoreError) -> ErrorCode {
    match e {
        VecStoreError::InvalidK
        | VecStoreError::InvalidQuery
        | VecStoreError::DimensionMismatch { .. } => ErrorCode::BadRequest,
        _ => ErrorCode::Internal,
    }
}

/// Shared service state. The engine is swapped whole on ingest.
pub struct AppState {
    config: ServiceConfig,
    lexicons: Lexicons,
    calibration: Calibration,
    backend: Arc<dyn LlmBackend>,
    engine: RwLock<Option<Arc<Engine>>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
    ingest_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Validates paths, loads lexicons and calibration, and opens the index
    /// if one has been written.
    pub fn new(config: ServiceConfig) -> anyhow::Result<Self> {
        config.check_paths()?;
        let lexicons = Lexicons::load_dir(&config.lexicons)?;
        let calibration = Calibration::load(&config.calibration)?;
        let backend = config.backend.build()?;
        let engine = if config.index.is_file() {
            Some(Arc::new(Engine::open(&config.index, lexicons.clone())?))
        } else {
            None
        };
        Ok(AppState {
            config,
            lexicons,
            calibration,
            backend,
            engine: RwLock::new(engine),
            sessions: Mutex::new(HashMap::new()),
            ingest_lock: tokio::sync::Mutex::new(()),
        })
    }

    /// Replaces the backend (tests inject failing ones).
    pub fn with_backend(mut self, backend: Arc<dyn LlmBackend>) -> Self {
        self.backend = backend;
        self
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine
            .read()
            .expect("engine lock poisoned")
            .clone()
            .ok_or_else(|| ApiError::not_found("no index loaded; POST /ingest first"))
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            provider: self.config.provider.clone(),
            fusion: self.config.fusion(),
            toggles: self.config.toggles,
            calibration: self.calibration,
            generation: self.generation_config(None, None, None, false),
            lexicon_dir: Some(self.config.lexicons.clone()),
            ..EngineConfig::default()
        }
    }

    fn generation_config(
        &self,
        k: Option<usize>,
        tau: Option<f64>,
        level: Option<Option<Level>>,
        affect_in_prompt: bool,
    ) -> GenerationConfig {
        GenerationConfig {
            retrieval: RetrievalConfig {
                k: k.unwrap_or(self.config.k),
                tau: tau.unwrap_or(self.config.tau),
                level: level.unwrap_or(Some(Level::Sentence)),
            },
            affect_in_prompt,
            history_window: self.history_window(),
        }
    }

    fn history_window(&self) -> usize {
        self.config.history_window.unwrap_or(DEFAULT_HISTORY_WINDOW)
    }

    fn session(&self, id: &str) -> Arc<Mutex<ChatSession>> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        Arc::clone(
            sessions
                .entry(id.to_string())
                .or_insert_with(|| Arc::new(Mutex::new(ChatSession::new(id, self.history_window())))),
        )
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Per-request enrichment overrides shared by /query and /chat.
#[derive(Debug, Default, Deserialize)]
struct Overrides {
    lambda: Option<f64>,
    toggles: Option<LexiconToggles>,
}

impl Overrides {
    fn encoder(&self, engine: &Engine) -> Result<SegmentEncoder, ApiError> {
        let fusion = self.lambda.map(|lambda| eaef_core::FusionConfig {
            lambda,
            ..engine.config().fusion
        });
        Ok(engine.encoder_with(fusion, self.toggles)?)
    }
}

fn parse_level(level: Option<&str>) -> Result<Option<Option<Level>>, ApiError> {
    match level {
        None => Ok(None),
        Some("any") => Ok(Some(None)),
        Some(s) => s
            .parse::<Level>()
            .map(|l| Some(Some(l)))
            .map_err(ApiError::bad_request),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub segment_id: String,
    pub similarity: f64,
    pub text: String,
    pub level: Level,
    pub session_id: String,
}

fn hit_views(hits: &[(SearchHit, DocRecord)]) -> Vec<HitView> {
    hits.iter()
        .map(|(h, r)| HitView {
            segment_id: h.segment_id.clone(),
            similarity: h.similarity,
            text: r.text.clone(),
            level: r.level,
            session_id: r.session_id.clone(),
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct IngestRequest {
    manifest_path: String,
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestStats>, ApiError> {
    let req: IngestRequest = parse(&body)?;
    let _writer = state.ingest_lock.lock().await;
    let st = Arc::clone(&state);
    let engine = blocking(move || {
        let transcripts = read_manifest(&req.manifest_path)?;
        let engine = Engine::ingest(st.engine_config(), st.lexicons.clone(), &transcripts)?;
        engine.save(&st.config.index).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(engine)
    })
    .await?;
    let stats = engine.stats();
    *state.engine.write().expect("engine lock poisoned") = Some(Arc::new(engine));
    tracing::info!(?stats, "index rebuilt");
    Ok(Json(stats))
}

#[derive(Debug, Deserialize)]
struct QueryRequest {
    text: String,
    k: Option<usize>,
    tau: Option<f64>,
    level: Option<String>,
    #[serde(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<HitView>,
    pub affect: AffectVector,
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = parse(&body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text must not be empty"));
    }
    let level = parse_level(req.level.as_deref())?;
    let engine = state.engine()?;
    let cfg = state.generation_config(req.k, req.tau, level, false).retrieval;
    blocking(move || {
        let encoder = req.overrides.encoder(&engine)?;
        let r = retrieve(&req.text, engine.index(), &encoder, &cfg)?;
        Ok(Json(QueryResponse {
            hits: hit_views(&r.hits),
            affect: r.affect,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ChatRequest {
    session_id: String,
    message: String,
    #[serde(default)]
    affect_in_prompt: bool,
    k: Option<usize>,
    tau: Option<f64>,
    #[serde(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub response: GeneratedResponse,
    pub scores: QualityScores,
    pub hits: Vec<HitView>,
    pub affect: AffectVector,
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ChatResponse>, ApiError> {
    let req: ChatRequest = parse(&body)?;
    if req.message.trim().is_empty() {
        return Err(ApiError::bad_request("message must not be empty"));
    }
    let engine = state.engine()?;
    let session = state.session(&req.session_id);
    let cfg = state.generation_config(req.k, req.tau, None, req.affect_in_prompt);
    let backend = Arc::clone(&state.backend);
    blocking(move || {
        let encoder = req.overrides.encoder(&engine)?;
        let ctx = ChatContext {
            index: engine.index(),
            encoder: &encoder,
            backend: backend.as_ref(),
            scorer: engine.scorer(),
            config: cfg,
        };
        let mut session = session.lock().expect("session poisoned");
        let (generation, scores) = chat_turn(&mut session, &req.message, &ctx)?;
        Ok(Json(ChatResponse {
            session_id: req.session_id,
            hits: hit_views(&generation.bundle.hits),
            affect: generation.bundle.affect_summary,
            response: generation.response,
            scores,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ScoreRequest {
    responses: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<QualityScores>,
    pub average: QualityScores,
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req: ScoreRequest = parse(&body)?;
    if req.responses.is_empty() {
        return Err(ApiError::bad_request("responses must not be empty"));
    }
    let engine = state.engine()?;
    blocking(move || {
        let scores = req
            .responses
            .iter()
            .map(|r| engine.score(r))
            .collect::<Result<Vec<_>, _>>()?;
        let average = QualityScores::average(&scores).map_err(eaef_core::Error::from)?;
        Ok(Json(ScoreResponse { scores, average }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub index_fingerprint: Option<String>,
    pub segments: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let engine = state.engine.read().expect("engine lock poisoned").clone();
    Json(Health {
        status: "ok".into(),
        version: eaef_core::VERSION.into(),
        index_fingerprint: engine.as_ref().map(|e| e.index().fingerprint()),
        segments: engine.as_ref().map_or(0, |e| e.index().len()),
    })
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn wrong_method() -> ApiError {
    ApiError::bad_request("method not allowed for this endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/ingest", post(ingest))
        .route("/query", post(query))
        .route("/chat", post(chat))
        .route("/score", post(score))
        .route("/health", get(health))
        .method_not_allowed_fallback(wrong_method);
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(axum::routing::any(unknown_route))),
        None => api.fallback(unknown_route),
    };
    app.with_state(state).layer(TraceLayer::new_for_http())
}

pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let bind = config.bind;
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
