//! Token embeddings, self-attention pooling and affect fusion.
//!
//! A segment's tokens are embedded one vector per token, mixed by a
//! parameter-free self-attention (`α_ij = softmax_j(e_i · e_j)`), summed into
//! one vector, L2-normalized and finally shifted by a projected
//! [`AffectVector`].

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::{AffectVector, Lexicons, AFFECT_DIM};

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_e4ef;
pub const DEFAULT_PROJECTION_SEED: u64 = 42;

pub const EMBED_URL_ENV: &str = "EAEF_EMBED_URL";
pub const EMBED_KEY_ENV: &str = "EAEF_EMBED_KEY";

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot pool an empty set of vectors")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding request failed (retryable): {0}")]
    Retryable(String),
    #[error("embedding provider protocol error: {0}")]
    Protocol(String),
}

impl EmbeddingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Retryable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    /// L2-normalized copy. The zero vector is returned unchanged but still
    /// flagged normalized; check [`EmbeddingVector::is_zero`].
    pub fn normalized(values: Vec<f64>) -> Self {
        let mut v = EmbeddingVector::new(values);
        v.normalize();
        v
    }

    pub fn normalize(&mut self) {
        let norm = l2_norm(&self.values);
        if norm > 0.0 {
            for x in &mut self.values {
                *x /= norm;
            }
        }
        self.normalized = true;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|x| *x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Checks the unit-norm invariant for normalized, nonzero vectors.
    pub fn norm_ok(&self) -> bool {
        !self.normalized || self.is_zero() || (self.norm() - 1.0).abs() < NORM_TOLERANCE
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; `None` when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let denom = l2_norm(a) * l2_norm(b);
    (denom > 0.0).then(|| dot(a, b) / denom)
}

/// Maps texts (tokens) to fixed-dimension vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn name(&self) -> String;
}

/// Provider deriving each vector from a seeded hash of the token.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dimension == 0 {
            return Err(EmbeddingError::Config("dimension must be positive".into()));
        }
        Ok(HashEmbedder { dimension, seed })
    }

    pub fn embed_one(&self, token: &str) -> EmbeddingVector {
        let key = xxhash_rust::xxh3::xxh3_64_with_seed(token.as_bytes(), self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let values = (0..self.dimension)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        EmbeddingVector::normalized(values)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn name(&self) -> String {
        format!("hash-d{}-s{}", self.dimension, self.seed)
    }
}

/// Client for the de-facto embeddings API:
/// `POST {"input": [...], "model": ...}` → `{"data": [{"embedding": [...]}]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    batch_size: usize,
    max_in_flight: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(
        url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Result<Self, EmbeddingError> {
        if dimension == 0 {
            return Err(EmbeddingError::Config("dimension must be positive".into()));
        }
        Ok(RemoteEmbedder {
            url: url.into(),
            api_key,
            model: model.into(),
            dimension,
            batch_size: 64,
            max_in_flight: 4,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        })
    }

    pub fn with_batching(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    fn request(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = EmbedRequest {
            input: batch,
            model: &self.model,
        };
        let resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Status(code, _) if code < 500 && code != 429 => {
                EmbeddingError::Protocol(format!("HTTP {code} from {}", self.url))
            }
            other => EmbeddingError::Retryable(other.to_string()),
        })?;
        let parsed: EmbedResponse = resp
            .into_json()
            .map_err(|e| EmbeddingError::Protocol(format!("bad response body: {e}")))?;
        if parsed.data.len() != batch.len() {
            return Err(EmbeddingError::Protocol(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dimension {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dimension,
                        found: d.embedding.len(),
                    });
                }
                Ok(EmbeddingVector::normalized(d.embedding))
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    /// Batches are sent up to `max_in_flight` at a time; output order
    /// matches input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.max_in_flight) {
            let results: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| scope.spawn(move || self.request(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    DeterministicHash {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_hash_seed")]
        seed: u64,
    },
    Remote {
        dimension: usize,
        /// Falls back to `EAEF_EMBED_URL`.
        #[serde(default)]
        endpoint: Option<String>,
        model: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_hash_seed() -> u64 {
    DEFAULT_HASH_SEED
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_in_flight() -> usize {
    4
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::DeterministicHash {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl ProviderConfig {
    pub fn dimension(&self) -> usize {
        match self {
            ProviderConfig::DeterministicHash { dimension, .. } => *dimension,
            ProviderConfig::Remote { dimension, .. } => *dimension,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>, EmbeddingError> {
        match self {
            ProviderConfig::DeterministicHash { dimension, seed } => {
                Ok(Arc::new(HashEmbedder::new(*dimension, *seed)?))
            }
            ProviderConfig::Remote {
                dimension,
                endpoint,
                model,
                timeout_secs,
                max_in_flight,
            } => {
                let url = endpoint
                    .clone()
                    .or_else(|| std::env::var(EMBED_URL_ENV).ok())
                    .ok_or_else(|| {
                        EmbeddingError::Config(format!("no endpoint and {EMBED_URL_ENV} unset"))
                    })?;
                let key = std::env::var(EMBED_KEY_ENV).ok();
                let embedder = RemoteEmbedder::new(
                    url,
                    key,
                    model.clone(),
                    *dimension,
                    Duration::from_secs(*timeout_secs),
                )?
                .with_batching(64, *max_in_flight);
                Ok(Arc::new(embedder))
            }
        }
    }
}

/// Row-stochastic attention matrix over the given vector slices.
fn attention_matrix(vectors: &[&[f64]]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|ei| {
            let logits: Vec<f64> = vectors.iter().map(|ej| dot(ei, ej)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

/// `α_ij = exp(e_i·e_j) / Σ_k exp(e_i·e_k)`, computed with row-max
/// subtraction. Raw dot products, no `1/√d` temperature.
pub fn attention_weights(vectors: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    check_uniform(vectors)?;
    let slices: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    Ok(attention_matrix(&slices))
}

/// `Σ_i Σ_j α_ij e_j` over slices of equal length.
fn pool_slices(vectors: &[&[f64]]) -> Vec<f64> {
    let alpha = attention_matrix(vectors);
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for row in &alpha {
        // a_i = Σ_j α_ij e_j, accumulated straight into φ
        for (weight, ej) in row.iter().zip(vectors) {
            for (o, x) in out.iter_mut().zip(ej.iter()) {
                *o += weight * x;
            }
        }
    }
    out
}

fn check_uniform(vectors: &[EmbeddingVector]) -> Result<usize, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyInput)?;
    let dim = first.dimension();
    for v in vectors {
        if v.dimension() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                found: v.dimension(),
            });
        }
    }
    Ok(dim)
}

/// Unnormalized pooled vector `φ = Σ_i a_i`.
pub fn attention_pool_raw(vectors: &[EmbeddingVector]) -> Result<Vec<f64>, EmbeddingError> {
    check_uniform(vectors)?;
    let slices: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    Ok(pool_slices(&slices))
}

/// [`attention_pool_raw`] followed by L2 normalization.
pub fn attention_pool(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    attention_pool_raw(vectors).map(EmbeddingVector::normalized)
}

/// Runs attention pooling independently on `heads` contiguous dimension
/// blocks and concatenates the results.
pub fn multi_head_pool_raw(
    vectors: &[EmbeddingVector],
    heads: usize,
) -> Result<Vec<f64>, EmbeddingError> {
    let dim = check_uniform(vectors)?;
    if heads == 0 || dim % heads != 0 {
        return Err(EmbeddingError::Config(format!(
            "heads ({heads}) must divide the dimension ({dim})"
        )));
    }
    let width = dim / heads;
    let mut out = Vec::with_capacity(dim);
    for h in 0..heads {
        let block: Vec<&[f64]> = vectors
            .iter()
            .map(|v| &v.values()[h * width..(h + 1) * width])
            .collect();
        out.extend(pool_slices(&block));
    }
    Ok(out)
}

pub fn multi_head_pool(
    vectors: &[EmbeddingVector],
    heads: usize,
) -> Result<EmbeddingVector, EmbeddingError> {
    multi_head_pool_raw(vectors, heads).map(EmbeddingVector::normalized)
}

/// Session-level vector from its sentence vectors.
pub fn fuse_session(sentence_vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    attention_pool(sentence_vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub lambda: f64,
    pub projection_seed: u64,
    pub heads: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda: 1.0,
            projection_seed: DEFAULT_PROJECTION_SEED,
            heads: 1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, dimension: usize) -> Result<(), EmbeddingError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EmbeddingError::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.heads == 0 || dimension % self.heads != 0 {
            return Err(EmbeddingError::Config(format!(
                "heads ({}) must divide the dimension ({dimension})",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Fixed seeded 12→D projection with entries uniform in `(-1/√12, 1/√12)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectProjection {
    dimension: usize,
    /// Row-major, `dimension` rows of [`AFFECT_DIM`] entries.
    weights: Vec<f64>,
}

impl AffectProjection {
    pub fn new(dimension: usize, seed: u64) -> Self {
        let bound = 1.0 / (AFFECT_DIM as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dimension * AFFECT_DIM)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        AffectProjection { dimension, weights }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, affect: &AffectVector) -> Vec<f64> {
        let a = affect.to_array();
        self.weights
            .chunks_exact(AFFECT_DIM)
            .map(|row| dot(row, &a))
            .collect()
    }
}

/// Adds `λ · P·a` to segment embeddings.
#[derive(Debug, Clone)]
pub struct AffectEnricher {
    lambda: f64,
    projection: AffectProjection,
}

impl AffectEnricher {
    pub fn new(dimension: usize, config: &FusionConfig) -> Result<Self, EmbeddingError> {
        config.validate(dimension)?;
        Ok(AffectEnricher {
            lambda: config.lambda,
            projection: AffectProjection::new(dimension, config.projection_seed),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn projection(&self) -> &AffectProjection {
        &self.projection
    }

    /// Returns the input untouched when `λ = 0` or the affect vector is
    /// zero. Otherwise re-normalizes if the input was normalized.
    pub fn enhance(
        &self,
        segment: &EmbeddingVector,
        affect: &AffectVector,
    ) -> Result<EmbeddingVector, EmbeddingError> {
        if segment.dimension() != self.projection.dimension() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.projection.dimension(),
                found: segment.dimension(),
            });
        }
        if self.lambda == 0.0 || affect.is_zero() {
            return Ok(segment.clone());
        }
        let shift = self.projection.apply(affect);
        let values: Vec<f64> = segment
            .values()
            .iter()
            .zip(shift)
            .map(|(v, s)| v + self.lambda * s)
            .collect();
        Ok(if segment.is_normalized() {
            EmbeddingVector::normalized(values)
        } else {
            EmbeddingVector::new(values)
        })
    }
}

pub fn enhance_embedding(
    segment: &EmbeddingVector,
    affect: &AffectVector,
    config: &FusionConfig,
) -> Result<EmbeddingVector, EmbeddingError> {
    AffectEnricher::new(segment.dimension(), config)?.enhance(segment, affect)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSegment {
    pub vector: EmbeddingVector,
    pub affect: AffectVector,
}

/// Token list → affect-enhanced, normalized segment vector.
#[derive(Clone)]
pub struct SegmentEncoder {
    provider: Arc<dyn EmbeddingProvider>,
    lexicons: Lexicons,
    enricher: AffectEnricher,
    heads: usize,
}

impl std::fmt::Debug for SegmentEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentEncoder")
            .field("provider", &self.provider.name())
            .field("lexicons", &self.lexicons.toggles())
            .field("lambda", &self.enricher.lambda())
            .field("heads", &self.heads)
            .finish()
    }
}

impl SegmentEncoder {
    /// `lexicons` should already have toggles applied.
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        lexicons: Lexicons,
        fusion: &FusionConfig,
    ) -> Result<Self, EmbeddingError> {
        let enricher = AffectEnricher::new(provider.dimension(), fusion)?;
        Ok(SegmentEncoder {
            provider,
            lexicons,
            enricher,
            heads: fusion.heads,
        })
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn dimension(&self) -> usize {
        self.provider.dimension()
    }

    pub fn encode(&self, tokens: &[String]) -> Result<EncodedSegment, EmbeddingError> {
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let token_vectors = self.provider.embed_batch(tokens)?;
        let pooled = multi_head_pool(&token_vectors, self.heads)?;
        let affect = self.lexicons.segment_affect(tokens);
        let vector = self.enricher.enhance(&pooled, &affect)?;
        Ok(EncodedSegment { vector, affect })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec())
    }

    #[test]
    fn hash_provider_is_deterministic_and_unit_norm() {
        let p = HashEmbedder::new(384, 7).unwrap();
        let out = p
            .embed_batch(&["calm".to_string(), "calm".to_string(), "sad".to_string()])
            .unwrap();
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        for v in &out {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
        assert!(p.embed_batch(&[]).unwrap().is_empty());
        let other_seed = HashEmbedder::new(384, 8).unwrap();
        assert_ne!(other_seed.embed_one("calm"), out[0]);
    }

    #[test]
    fn attention_singleton() {
        let w = attention_weights(&[ev(&[0.3, -2.0])]).unwrap();
        assert_eq!(w, vec![vec![1.0]]);
    }

    #[test]
    fn attention_orthonormal_pair() {
        let w = attention_weights(&[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])]).unwrap();
        // softmax([1, 0]) computed by hand
        let e = std::f64::consts::E;
        let diag = e / (e + 1.0);
        let off = 1.0 / (e + 1.0);
        assert!((w[0][0] - diag).abs() < 1e-12 && (w[1][1] - diag).abs() < 1e-12);
        assert!((w[0][1] - off).abs() < 1e-12 && (w[1][0] - off).abs() < 1e-12);
        assert!((diag - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn attention_identical_pair_is_uniform() {
        let v = ev(&[0.6, 0.8]);
        let w = attention_weights(&[v.clone(), v]).unwrap();
        assert!(w.iter().flatten().all(|x| *x == 0.5));
    }

    #[test]
    fn attention_large_logits_are_stable() {
        let w = attention_weights(&[ev(&[100.0, 0.0]), ev(&[-100.0, 0.0])]).unwrap();
        assert!(w.iter().flatten().all(|x| x.is_finite()));
        assert!((w[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pool_cases() {
        let v = ev(&[0.2, -0.5, 0.1]);
        assert_eq!(attention_pool_raw(std::slice::from_ref(&v)).unwrap(), v.values());
        let raw = attention_pool_raw(&[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])]).unwrap();
        assert!((raw[0] - 1.0).abs() < 1e-12 && (raw[1] - 1.0).abs() < 1e-12);
        let raw = attention_pool_raw(&[v.clone(), v.clone(), v.clone()]).unwrap();
        for (r, x) in raw.iter().zip(v.values()) {
            assert!((r - 3.0 * x).abs() < 1e-12);
        }
        assert!(matches!(attention_pool(&[]), Err(EmbeddingError::EmptyInput)));
    }

    #[test]
    fn pool_rejects_mixed_dimensions() {
        let err = attention_pool(&[ev(&[1.0]), ev(&[1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, EmbeddingError::DimensionMismatch { .. }));
    }

    #[test]
    fn multi_head_matches_blockwise_brute_force() {
        let vs = [
            ev(&[0.1, 0.9, -0.3, 0.4]),
            ev(&[0.5, -0.2, 0.8, 0.0]),
            ev(&[-0.7, 0.3, 0.2, 0.6]),
        ];
        let two = multi_head_pool_raw(&vs, 2).unwrap();
        let left: Vec<_> = vs.iter().map(|v| ev(&v.values()[..2])).collect();
        let right: Vec<_> = vs.iter().map(|v| ev(&v.values()[2..])).collect();
        let mut expected = attention_pool_raw(&left).unwrap();
        expected.extend(attention_pool_raw(&right).unwrap());
        assert_eq!(two, expected);
        assert_eq!(multi_head_pool_raw(&vs, 1).unwrap(), attention_pool_raw(&vs).unwrap());
        assert!(multi_head_pool(&vs, 3).is_err());
        assert!(multi_head_pool(&vs, 0).is_err());
    }

    #[test]
    fn multi_head_identical_vectors() {
        let v = ev(&[0.5, -0.5, 0.25, 1.0]);
        let vs = vec![v.clone(); 4];
        for heads in [1, 2, 4] {
            let raw = multi_head_pool_raw(&vs, heads).unwrap();
            for (r, x) in raw.iter().zip(v.values()) {
                assert!((r - 4.0 * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enhance_identity_branches() {
        let v = EmbeddingVector::normalized(vec![0.3, 0.4, 0.5, 0.1]);
        let affect = AffectVector {
            fear: 1.0,
            valence: -0.5,
            ..AffectVector::ZERO
        };
        let off = FusionConfig {
            lambda: 0.0,
            ..FusionConfig::default()
        };
        assert_eq!(enhance_embedding(&v, &affect, &off).unwrap(), v);
        let on = FusionConfig::default();
        assert_eq!(enhance_embedding(&v, &AffectVector::ZERO, &on).unwrap(), v);
        let shifted = enhance_embedding(&v, &affect, &on).unwrap();
        assert_ne!(shifted, v);
        assert!(shifted.norm_ok());
        assert!((shifted.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enhance_matches_hand_projection() {
        let seed = 9;
        let v = EmbeddingVector::new(vec![0.1, -0.2, 0.3, 0.4]);
        let affect = AffectVector {
            fear: 1.0,
            sadness: 2.0,
            valence: -0.95,
            swn_obj: 0.5,
            ..AffectVector::ZERO
        };
        let cfg = FusionConfig {
            lambda: 0.7,
            projection_seed: seed,
            heads: 1,
        };
        // Oracle: regenerate the 4×12 matrix from the seed and multiply out.
        let bound = 1.0 / 12f64.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = [[0.0f64; 12]; 4];
        for row in p.iter_mut() {
            for cell in row.iter_mut() {
                *cell = rng.gen_range(-bound..bound);
            }
        }
        let a = affect.to_array();
        let mut expected = [0.0; 4];
        for d in 0..4 {
            let mut acc = 0.0;
            for j in 0..12 {
                acc += p[d][j] * a[j];
            }
            expected[d] = v.values()[d] + 0.7 * acc;
        }
        let got = enhance_embedding(&v, &affect, &cfg).unwrap();
        for (g, e) in got.values().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert_eq!(got, enhance_embedding(&v, &affect, &cfg).unwrap());
    }

    #[test]
    fn projection_entries_within_bound() {
        let p = AffectProjection::new(384, 42);
        let bound = 1.0 / 12f64.sqrt();
        assert_eq!(p.weights().len(), 384 * 12);
        assert!(p.weights().iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn fuse_session_cases() {
        let a = EmbeddingVector::normalized(vec![0.6, 0.8, 0.0]);
        for (x, y) in fuse_session(std::slice::from_ref(&a)).unwrap().values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-15);
        }
        let fused = fuse_session(&[a.clone(), a.clone(), a.clone()]).unwrap();
        for (x, y) in fused.values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(fuse_session(&[]).is_err());
    }

    #[test]
    fn fusion_config_validation() {
        let bad = FusionConfig {
            lambda: -1.0,
            ..FusionConfig::default()
        };
        assert!(bad.validate(4).is_err());
        let heads = FusionConfig {
            heads: 3,
            ..FusionConfig::default()
        };
        assert!(heads.validate(4).is_err());
        assert!(FusionConfig::default().validate(384).is_ok());
    }

    #[test]
    fn provider_config_serde() {
        let cfg: ProviderConfig =
            serde_json::from_str(r#"{"kind":"deterministic_hash","dimension":8}"#).unwrap();
        assert_eq!(cfg.dimension(), 8);
        assert_eq!(cfg.build().unwrap().dimension(), 8);
    }
}
