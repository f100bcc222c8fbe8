//! Corpus ingestion: transcripts in, searchable index and trained metric
//! models out.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{fuse_session, EmbeddingProvider, FusionConfig, ProviderConfig, SegmentEncoder};
use crate::generation::{
    generate, retrieve, Generation, GenerationConfig, LlmBackend, Retrieval, RetrievalConfig, Turn,
};
use crate::lexicon::{AffectVector, LexiconToggles, Lexicons};
use crate::metrics::{Calibration, NgramModel, QualityScores, Scorer, TfIdfModel};
use crate::segmentation::{Level, RawTranscript, Segmenter, Speaker};
use crate::vecstore::{DocRecord, VectorIndex};
use crate::{Error, Result};

pub const DEFAULT_NGRAM_ORDER: usize = 2;

/// Everything that shapes the index and the trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub provider: ProviderConfig,
    pub fusion: FusionConfig,
    pub toggles: LexiconToggles,
    pub ngram_order: usize,
    pub calibration: Calibration,
    pub generation: GenerationConfig,
    /// Where the lexicons were loaded from, so a saved engine can be reopened.
    pub lexicon_dir: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            provider: ProviderConfig::default(),
            fusion: FusionConfig::default(),
            toggles: LexiconToggles::all(),
            ngram_order: DEFAULT_NGRAM_ORDER,
            calibration: Calibration::default(),
            generation: GenerationConfig::default(),
            lexicon_dir: None,
        }
    }
}

/// Reads a manifest (JSON array of transcript paths, relative entries
/// resolved against the manifest's directory). Session id = file stem.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<RawTranscript>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<PathBuf> = serde_json::from_str(&text).map_err(|e| Error::config(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|entry| {
            let file = if entry.is_absolute() {
                entry
            } else {
                base.join(entry)
            };
            let body = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let session_id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::config(&file, "transcript file has no usable name"))?
                .to_string();
            Ok(RawTranscript { session_id, body })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub segments_indexed: usize,
    pub sessions: usize,
}

/// On-disk companion of the index: config plus trained metric models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EngineState {
    config: EngineConfig,
    stats: IngestStats,
    tfidf: TfIdfModel,
    ngram: NgramModel,
}

pub fn state_path(index_path: &Path) -> PathBuf {
    let mut s = index_path.as_os_str().to_owned();
    s.push(".state.json");
    PathBuf::from(s)
}

/// A built index with its encoder and scorer.
#[derive(Clone)]
pub struct Engine {
    config: EngineConfig,
    lexicons: Lexicons,
    provider: Arc<dyn EmbeddingProvider>,
    encoder: SegmentEncoder,
    index: VectorIndex,
    scorer: Scorer,
    stats: IngestStats,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("encoder", &self.encoder)
            .field("index_len", &self.index.len())
            .field("stats", &self.stats)
            .finish()
    }
}

impl Engine {
    /// An engine over an empty corpus.
    pub fn empty(config: EngineConfig, lexicons: Lexicons) -> Result<Self> {
        let tfidf = TfIdfModel::default();
        let ngram = NgramModel::new(config.ngram_order)?;
        let index = VectorIndex::new(config.provider.dimension());
        Engine::assemble(config, lexicons, index, tfidf, ngram, IngestStats::default())
    }

    fn assemble(
        config: EngineConfig,
        lexicons: Lexicons,
        index: VectorIndex,
        tfidf: TfIdfModel,
        ngram: NgramModel,
        stats: IngestStats,
    ) -> Result<Self> {
        let provider = config.provider.build()?;
        config.fusion.validate(provider.dimension())?;
        let encoder = SegmentEncoder::new(
            Arc::clone(&provider),
            lexicons.with_toggles(&config.toggles),
            &config.fusion,
        )?;
        // Metrics always see every lexicon; toggles only steer enrichment.
        let scorer = Scorer::new(
            lexicons.clone(),
            Arc::clone(&provider),
            tfidf,
            ngram,
            config.calibration,
        )?;
        Ok(Engine {
            config,
            lexicons,
            provider,
            encoder,
            index,
            scorer,
            stats,
        })
    }

    /// Segments, encodes and indexes every transcript (sentence and session
    /// levels) and trains the metric models on the sentence tokens. Always
    /// builds from scratch.
    pub fn ingest(config: EngineConfig, lexicons: Lexicons, transcripts: &[RawTranscript]) -> Result<Self> {
        let mut engine = Engine::empty(config, lexicons)?;
        let segmenter = Segmenter::default();
        let mut index = VectorIndex::new(engine.provider.dimension());
        let mut corpus: Vec<Vec<String>> = Vec::new();
        let mut stats = IngestStats::default();

        for raw in transcripts {
            let tree = segmenter.segment(raw);
            let mut sentence_vectors = Vec::new();
            let mut session_affect = AffectVector::ZERO;
            for node in &tree.sentences {
                if node.tokens.is_empty() {
                    continue;
                }
                let encoded = engine.encoder.encode(&node.tokens)?;
                index.add(
                    encoded.vector.values(),
                    DocRecord {
                        segment_id: node.segment.id.clone(),
                        level: Level::Sentence,
                        session_id: raw.session_id.clone(),
                        speaker: node.segment.speaker,
                        text: node.segment.text.clone(),
                        affect_summary: encoded.affect,
                    },
                )?;
                session_affect += encoded.affect;
                sentence_vectors.push(encoded.vector);
                corpus.push(node.tokens.clone());
            }
            if sentence_vectors.is_empty() {
                continue;
            }
            let fused = fuse_session(&sentence_vectors)?;
            index.add(
                fused.values(),
                DocRecord {
                    segment_id: tree.session.id.clone(),
                    level: Level::Session,
                    session_id: raw.session_id.clone(),
                    speaker: Speaker::Unknown,
                    text: tree.session.text.clone(),
                    affect_summary: session_affect,
                },
            )?;
            stats.sessions += 1;
        }
        stats.segments_indexed = index.len();

        let tfidf = TfIdfModel::train(&corpus);
        let ngram = NgramModel::train(engine.config.ngram_order, &corpus)?;
        engine.scorer = Scorer::new(
            engine.lexicons.clone(),
            Arc::clone(&engine.provider),
            tfidf,
            ngram,
            engine.config.calibration,
        )?;
        engine.index = index;
        engine.stats = stats;
        Ok(engine)
    }

    /// Writes the index, its metadata sidecar and `<index>.state.json`.
    pub fn save(&self, index_path: impl AsRef<Path>) -> Result<()> {
        let index_path = index_path.as_ref();
        self.index.save(index_path)?;
        let state = EngineState {
            config: self.config.clone(),
            stats: self.stats,
            tfidf: self.scorer.tfidf().clone(),
            ngram: self.scorer.ngram().clone(),
        };
        let path = state_path(index_path);
        let json = serde_json::to_vec(&state).map_err(|e| Error::config(&path, e))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Reopens a saved engine.
    pub fn open(index_path: impl AsRef<Path>, lexicons: Lexicons) -> Result<Self> {
        let index_path = index_path.as_ref();
        let path = state_path(index_path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: EngineState = serde_json::from_str(&text).map_err(|e| Error::config(&path, e))?;
        let index = VectorIndex::load(index_path)?;
        if index.dimension() != state.config.provider.dimension() {
            return Err(Error::config(
                &path,
                format!(
                    "index dimension {} does not match provider dimension {}",
                    index.dimension(),
                    state.config.provider.dimension()
                ),
            ));
        }
        Engine::assemble(state.config, lexicons, index, state.tfidf, state.ngram, state.stats)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn encoder(&self) -> &SegmentEncoder {
        &self.encoder
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Encoder with per-request fusion and toggle overrides.
    pub fn encoder_with(
        &self,
        fusion: Option<FusionConfig>,
        toggles: Option<LexiconToggles>,
    ) -> Result<SegmentEncoder> {
        if fusion.is_none() && toggles.is_none() {
            return Ok(self.encoder.clone());
        }
        let fusion = fusion.unwrap_or(self.config.fusion);
        let toggles = toggles.unwrap_or(self.config.toggles);
        Ok(SegmentEncoder::new(
            Arc::clone(&self.provider),
            self.lexicons.with_toggles(&toggles),
            &fusion,
        )?)
    }

    pub fn retrieve(&self, query: &str, cfg: &RetrievalConfig) -> Result<Retrieval> {
        Ok(retrieve(query, &self.index, &self.encoder, cfg)?)
    }

    pub fn generate(
        &self,
        query: &str,
        history: &[Turn],
        backend: &dyn LlmBackend,
    ) -> Result<Generation> {
        Ok(generate(
            query,
            history,
            &self.index,
            &self.encoder,
            backend,
            &self.config.generation,
        )?)
    }

    pub fn score(&self, response: &str) -> Result<QualityScores> {
        Ok(self.scorer.score(response)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript(id: &str, body: &str) -> RawTranscript {
        RawTranscript {
            session_id: id.into(),
            body: body.into(),
        }
    }

    fn small_config() -> EngineConfig {
        EngineConfig {
            provider: ProviderConfig::DeterministicHash {
                dimension: 32,
                seed: 3,
            },
            ..EngineConfig::default()
        }
    }

    #[test]
    fn counts_sentences_plus_session() {
        let t = transcript(
            "s1",
            "CLIENT: I feel sad. Work is hard. I cannot sleep.",
        );
        let engine = Engine::ingest(small_config(), Lexicons::empty(), &[t]).unwrap();
        assert_eq!(
            engine.stats(),
            IngestStats {
                segments_indexed: 4,
                sessions: 1
            }
        );
        let levels: Vec<Level> = engine.index().records().iter().map(|r| r.level).collect();
        assert_eq!(
            levels,
            [Level::Sentence, Level::Sentence, Level::Sentence, Level::Session]
        );
    }

    #[test]
    fn empty_corpus() {
        let engine = Engine::ingest(small_config(), Lexicons::empty(), &[]).unwrap();
        assert_eq!(engine.stats(), IngestStats::default());
        assert!(engine.index().is_empty());
    }

    #[test]
    fn ingest_is_a_rebuild() {
        let ts = [transcript("a", "CLIENT: One two. Three four.")];
        let first = Engine::ingest(small_config(), Lexicons::empty(), &ts).unwrap();
        let second = Engine::ingest(small_config(), Lexicons::empty(), &ts).unwrap();
        assert_eq!(first.stats(), second.stats());
        assert_eq!(first.index().fingerprint(), second.index().fingerprint());
    }

    #[test]
    fn save_open_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let ts = [transcript("a", "CLIENT: I feel calm today. Work went fine.")];
        let engine = Engine::ingest(small_config(), Lexicons::empty(), &ts).unwrap();
        engine.save(&path).unwrap();
        let reopened = Engine::open(&path, Lexicons::empty()).unwrap();
        assert_eq!(reopened.config(), engine.config());
        assert_eq!(reopened.index().fingerprint(), engine.index().fingerprint());
        assert_eq!(
            reopened.score("work went fine").unwrap(),
            engine.score("work went fine").unwrap()
        );
    }
}
