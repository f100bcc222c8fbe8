//! Retrieve-then-generate: encode the query, search the index, assemble a
//! prompt from the hits and ask an LLM backend for a response.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, SegmentEncoder};
use crate::lexicon::AffectVector;
use crate::metrics::{MetricsError, QualityScores, Scorer};
use crate::segmentation::{tokenize, Level};
use crate::vecstore::{DocRecord, SearchHit, VecStoreError, VectorIndex, DEFAULT_K, DEFAULT_TAU};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";
/// System preamble of the prompt template.
pub const PROMPT_PREAMBLE: &str = include_str!("../resources/prompt_template_v1.txt");

pub const LLM_API_KEY_ENV: &str = "EAEF_LLM_API_KEY";
pub const LLM_BASE_URL_ENV: &str = "EAEF_LLM_BASE_URL";
pub const LLM_MODEL_ENV: &str = "EAEF_LLM_MODEL";

pub const DEFAULT_HISTORY_WINDOW: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("backend {backend} failed after {attempts} attempt(s): {message}")]
    Backend {
        backend: String,
        attempts: u32,
        message: String,
        /// The fully rendered prompt, kept for diagnosis.
        prompt: String,
    },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    VecStore(#[from] VecStoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub query: String,
    /// Sorted by similarity, highest first.
    pub hits: Vec<(SearchHit, DocRecord)>,
    pub affect_summary: AffectVector,
    pub history: Vec<Turn>,
    pub affect_in_prompt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub system: String,
    pub body: String,
}

impl AssembledPrompt {
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system, self.body)
    }
}

/// Fixed template: preamble, numbered `CONTEXT[i]` blocks in similarity
/// order, prior turns, optional affect line, then `USER: <query>`.
pub fn assemble_prompt(bundle: &PromptBundle) -> AssembledPrompt {
    let mut body = String::new();
    for (i, (_, record)) in bundle.hits.iter().enumerate() {
        let _ = writeln!(body, "CONTEXT[{}]: {}", i + 1, record.text);
    }
    if !bundle.hits.is_empty() {
        body.push('\n');
    }
    for turn in &bundle.history {
        let _ = writeln!(body, "USER: {}", turn.query);
        let _ = writeln!(body, "ASSISTANT: {}", turn.response);
    }
    if !bundle.history.is_empty() {
        body.push('\n');
    }
    if bundle.affect_in_prompt {
        let _ = writeln!(body, "AFFECT: {}", bundle.affect_summary);
    }
    let _ = write!(body, "USER: {}", bundle.query);
    AssembledPrompt {
        system: PROMPT_PREAMBLE.trim_end().to_string(),
        body,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(
        &self,
        bundle: &PromptBundle,
        prompt: &AssembledPrompt,
    ) -> Result<BackendReply, GenerationError>;
}

/// Deterministic stand-in: `MOCK|top=<first hit id or NONE>|q=<query>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl LlmBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        _prompt: &AssembledPrompt,
    ) -> Result<BackendReply, GenerationError> {
        let top = bundle
            .hits
            .first()
            .map_or("NONE", |(hit, _)| hit.segment_id.as_str());
        Ok(BackendReply {
            text: format!("MOCK|top={top}|q={}", bundle.query),
            usage: None,
        })
    }
}

/// Chat-completions client: `POST {base}/chat/completions` with
/// `{"model", "messages": [{"role", "content"}]}`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, GenerationError> {
        if timeout.is_zero() {
            return Err(GenerationError::Config("timeout must be positive".into()));
        }
        Ok(RemoteBackend {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            max_retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        })
    }

    fn attempt(&self, prompt: &AssembledPrompt) -> Result<BackendReply, Attempt> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.body,
                },
            ],
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, _) if code == 429 || code >= 500 => {
                Attempt::Retry(format!("HTTP {code}"))
            }
            ureq::Error::Status(code, _) => Attempt::Fatal(format!("HTTP {code}")),
            other => Attempt::Retry(other.to_string()),
        })?;
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Attempt::Fatal("response has no choices".into()))?;
        Ok(BackendReply {
            text: choice.message.content,
            usage: parsed.usage,
        })
    }
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(
        &self,
        _bundle: &PromptBundle,
        prompt: &AssembledPrompt,
    ) -> Result<BackendReply, GenerationError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let message = match self.attempt(prompt) {
                Ok(reply) => return Ok(reply),
                Err(Attempt::Fatal(m)) => m,
                Err(Attempt::Retry(m)) if attempts <= self.max_retries => {
                    std::thread::sleep(Duration::from_millis(100 * u64::from(attempts)));
                    let _ = m;
                    continue;
                }
                Err(Attempt::Retry(m)) => m,
            };
            return Err(GenerationError::Backend {
                backend: self.id(),
                attempts,
                message,
                prompt: prompt.render(),
            });
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Mock,
    Remote {
        /// Falls back to `EAEF_LLM_BASE_URL`.
        #[serde(default)]
        endpoint: Option<String>,
        /// Falls back to `EAEF_LLM_MODEL`.
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

impl BackendConfig {
    pub fn remote_from_env() -> Self {
        BackendConfig::Remote {
            endpoint: None,
            model: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_retries(),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LlmBackend>, GenerationError> {
        match self {
            BackendConfig::Mock => Ok(Arc::new(MockBackend)),
            BackendConfig::Remote {
                endpoint,
                model,
                timeout_secs,
                max_retries,
            } => {
                let base = endpoint
                    .clone()
                    .or_else(|| std::env::var(LLM_BASE_URL_ENV).ok())
                    .ok_or_else(|| {
                        GenerationError::Config(format!("no endpoint and {LLM_BASE_URL_ENV} unset"))
                    })?;
                let model = model
                    .clone()
                    .or_else(|| std::env::var(LLM_MODEL_ENV).ok())
                    .ok_or_else(|| {
                        GenerationError::Config(format!("no model and {LLM_MODEL_ENV} unset"))
                    })?;
                let key = std::env::var(LLM_API_KEY_ENV).ok();
                Ok(Arc::new(RemoteBackend::new(
                    &base,
                    model,
                    key,
                    Duration::from_secs(*timeout_secs),
                    *max_retries,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub tau: f64,
    /// Restrict hits to one segment level.
    pub level: Option<Level>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            level: Some(Level::Sentence),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<(SearchHit, DocRecord)>,
    pub affect: AffectVector,
}

/// Encodes `query` like an indexed sentence and searches `index`. An empty
/// index yields no hits.
pub fn retrieve(
    query: &str,
    index: &VectorIndex,
    encoder: &SegmentEncoder,
    cfg: &RetrievalConfig,
) -> Result<Retrieval, GenerationError> {
    if cfg.k == 0 {
        return Err(VecStoreError::InvalidK.into());
    }
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(GenerationError::EmptyQuery);
    }
    let encoded = encoder.encode(&tokens)?;
    if index.is_empty() {
        return Ok(Retrieval {
            hits: Vec::new(),
            affect: encoded.affect,
        });
    }
    let values = encoded.vector.values();
    let hits = match cfg.level {
        Some(level) => index.search_where(values, cfg.k, cfg.tau, |r| r.level == level)?,
        None => index.search(values, cfg.k, cfg.tau)?,
    };
    let hits = hits
        .into_iter()
        .map(|h| {
            let record = index.record(h.position).expect("hit position in range").clone();
            (h, record)
        })
        .collect();
    Ok(Retrieval {
        hits,
        affect: encoded.affect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub retrieved_ids: Vec<String>,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub response: GeneratedResponse,
    pub bundle: PromptBundle,
    pub prompt: AssembledPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    #[serde(flatten)]
    pub retrieval: RetrievalConfig,
    pub affect_in_prompt: bool,
    pub history_window: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            retrieval: RetrievalConfig::default(),
            affect_in_prompt: false,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }
}

/// tokenize → embed → enhance → search → assemble → backend.
pub fn generate(
    query: &str,
    history: &[Turn],
    index: &VectorIndex,
    encoder: &SegmentEncoder,
    backend: &dyn LlmBackend,
    cfg: &GenerationConfig,
) -> Result<Generation, GenerationError> {
    let retrieval = retrieve(query, index, encoder, &cfg.retrieval)?;
    let bundle = PromptBundle {
        query: query.to_string(),
        hits: retrieval.hits,
        affect_summary: retrieval.affect,
        history: history.to_vec(),
        affect_in_prompt: cfg.affect_in_prompt,
    };
    let prompt = assemble_prompt(&bundle);
    let started = Instant::now();
    let reply = backend.complete(&bundle, &prompt)?;
    let latency_ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);
    let response = GeneratedResponse {
        text: reply.text,
        backend_id: backend.id(),
        latency_ms,
        retrieved_ids: bundle.hits.iter().map(|(h, _)| h.segment_id.clone()).collect(),
        token_usage: reply.usage,
    };
    Ok(Generation {
        response,
        bundle,
        prompt,
    })
}

/// Per-session chat state. Turns beyond the window are evicted oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatSession {
    pub id: String,
    history: VecDeque<Turn>,
    window: usize,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, window: usize) -> Self {
        ChatSession {
            id: id.into(),
            history: VecDeque::with_capacity(window),
            window,
        }
    }

    pub fn history(&self) -> Vec<Turn> {
        self.history.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    fn push(&mut self, turn: Turn) {
        if self.window == 0 {
            return;
        }
        while self.history.len() >= self.window {
            self.history.pop_front();
        }
        self.history.push_back(turn);
    }
}

/// What a chat turn needs besides the session.
pub struct ChatContext<'a> {
    pub index: &'a VectorIndex,
    pub encoder: &'a SegmentEncoder,
    pub backend: &'a dyn LlmBackend,
    pub scorer: &'a Scorer,
    pub config: GenerationConfig,
}

/// Generates, records the turn and scores the response. History is only
/// updated on success.
pub fn chat_turn(
    session: &mut ChatSession,
    message: &str,
    ctx: &ChatContext<'_>,
) -> Result<(Generation, QualityScores), GenerationError> {
    let history = session.history();
    let generation = generate(message, &history, ctx.index, ctx.encoder, ctx.backend, &ctx.config)?;
    let scores = ctx.scorer.score(&generation.response.text)?;
    session.push(Turn {
        query: message.to_string(),
        response: generation.response.text.clone(),
    });
    Ok((generation, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::Speaker;

    fn hit(id: &str, sim: f64, text: &str) -> (SearchHit, DocRecord) {
        (
            SearchHit {
                segment_id: id.into(),
                similarity: sim,
                position: 0,
            },
            DocRecord {
                segment_id: id.into(),
                level: Level::Sentence,
                session_id: "s".into(),
                speaker: Speaker::Client,
                text: text.into(),
                affect_summary: AffectVector::ZERO,
            },
        )
    }

    fn bundle(hits: Vec<(SearchHit, DocRecord)>) -> PromptBundle {
        PromptBundle {
            query: "I feel anxious".into(),
            hits,
            affect_summary: AffectVector {
                fear: 1.0,
                ..AffectVector::ZERO
            },
            history: vec![],
            affect_in_prompt: false,
        }
    }

    #[test]
    fn prompt_without_hits() {
        let p = assemble_prompt(&bundle(vec![])).render();
        assert!(!p.contains("CONTEXT["));
        assert!(p.ends_with("USER: I feel anxious"));
        assert!(p.starts_with(PROMPT_PREAMBLE.trim_end()));
    }

    #[test]
    fn prompt_orders_context_by_similarity() {
        let b = bundle(vec![hit("a", 0.9, "first text"), hit("b", 0.4, "second text")]);
        let p = assemble_prompt(&b);
        assert!(p.body.starts_with("CONTEXT[1]: first text\nCONTEXT[2]: second text\n"));
        assert_eq!(p, assemble_prompt(&b));
    }

    #[test]
    fn prompt_history_and_affect_flag() {
        let mut b = bundle(vec![]);
        b.history.push(Turn {
            query: "hi".into(),
            response: "hello".into(),
        });
        let plain = assemble_prompt(&b).body;
        assert_eq!(plain, "USER: hi\nASSISTANT: hello\n\nUSER: I feel anxious");
        b.affect_in_prompt = true;
        let with_affect = assemble_prompt(&b).body;
        assert!(with_affect.contains("AFFECT: fear=1.000\n"));
    }

    #[test]
    fn mock_backend_contract() {
        let b = bundle(vec![hit("s1", 0.9, "x")]);
        let reply = MockBackend.complete(&b, &assemble_prompt(&b)).unwrap();
        assert_eq!(reply.text, "MOCK|top=s1|q=I feel anxious");
        let empty = bundle(vec![]);
        let reply = MockBackend.complete(&empty, &assemble_prompt(&empty)).unwrap();
        assert_eq!(reply.text, "MOCK|top=NONE|q=I feel anxious");
    }

    #[test]
    fn history_window_evicts_fifo() {
        let mut s = ChatSession::new("x", 2);
        for i in 0..3 {
            s.push(Turn {
                query: format!("q{i}"),
                response: String::new(),
            });
        }
        let h = s.history();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].query, "q1");
        assert_eq!(h[1].query, "q2");
    }

    #[test]
    fn backend_config_serde() {
        let cfg: BackendConfig = serde_json::from_str(r#"{"kind":"mock"}"#).unwrap();
        assert_eq!(cfg, BackendConfig::Mock);
        let cfg: BackendConfig =
            serde_json::from_str(r#"{"kind":"remote","endpoint":"http://x","model":"m"}"#).unwrap();
        assert!(matches!(cfg, BackendConfig::Remote { timeout_secs: 60, .. }));
        assert!(RemoteBackend::new("http://x", "m", None, Duration::ZERO, 0).is_err());
    }
}
