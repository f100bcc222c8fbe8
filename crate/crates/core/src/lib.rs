//! Emotion-aware retrieval-augmented response engine.
//!
//! Text embeddings are enriched with lexicon-derived affect vectors, indexed
//! for cosine retrieval, passed with the query to a pluggable LLM backend,
//! and the responses are scored for empathy, coherence, informativeness and
//! fluency.
//!
//! Module map:
//! - [`lexicon`]: NRC / VADER / SentiWordNet loading and affect vectors
//! - [`segmentation`]: transcript cleaning and sentence/phrase/token splits
//! - [`embedding`]: token embeddings, attention pooling, affect fusion
//! - [`vecstore`]: flat and clustered cosine index with persistence
//! - [`generation`]: prompt assembly, backends, chat sessions
//! - [`metrics`]: quality scores and calibration
//! - [`pipeline`]: corpus ingestion into an [`pipeline::Engine`]
//! - [`harness`]: with/without-lexicon evaluation runs and report tables

use std::path::{Path, PathBuf};

pub mod embedding;
pub mod generation;
pub mod harness;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod segmentation;
pub mod vecstore;

pub use embedding::{EmbeddingVector, FusionConfig, ProviderConfig};
pub use generation::{BackendConfig, GeneratedResponse, PromptBundle};
pub use lexicon::{AffectVector, LexiconToggles, Lexicons};
pub use metrics::{Calibration, QualityScores};
pub use pipeline::{Engine, EngineConfig};
pub use segmentation::{Level, Segment, Speaker};
pub use vecstore::{DocRecord, SearchHit, VectorIndex};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] lexicon::LexiconError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    VecStore(#[from] vecstore::VecStoreError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Generation(#[from] generation::GenerationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration in {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn config(path: &Path, message: impl std::fmt::Display) -> Self {
        Error::Config {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
