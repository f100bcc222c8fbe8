//! Response quality scores: empathy, coherence, informativeness, fluency,
//! their calibration onto a 1–5 scale and the averaged overall score.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider};
use crate::lexicon::Lexicons;
use crate::segmentation::tokenize;

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} model has not been trained")]
    Untrained(&'static str),
    #[error("invalid calibration for {metric}: lo {lo} must be below hi {hi}")]
    InvalidCalibration { metric: Metric, lo: f64, hi: f64 },
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("cannot average over zero responses")]
    NoResponses,
    #[error("score {0} outside [1, 5]")]
    OutOfRange(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Empathy,
    Coherence,
    Informativeness,
    Fluency,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Empathy,
        Metric::Coherence,
        Metric::Informativeness,
        Metric::Fluency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Empathy => "empathy",
            Metric::Coherence => "coherence",
            Metric::Informativeness => "informativeness",
            Metric::Fluency => "fluency",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weighted mean emotional intensity of the response's emotional words.
///
/// Weight is the number of NRC emotion categories a word carries (at least
/// one); intensity is |VADER valence|, else SentiWordNet pos + neg, else 1.
pub fn empathy_raw<S: AsRef<str>>(tokens: &[S], lexicons: &Lexicons) -> f64 {
    let mut weighted = 0.0;
    let mut total_weight = 0.0;
    for token in tokens {
        let hit = lexicons.lookup(token.as_ref());
        if hit.vector.is_zero() {
            continue;
        }
        let weight = hit.nrc.map_or(0, |m| m.emotion_count()).max(1) as f64;
        let intensity = match (hit.vader, hit.swn) {
            (Some(v), _) => v.abs(),
            (None, Some(s)) => s.pos + s.neg,
            (None, None) => 1.0,
        };
        weighted += weight * intensity;
        total_weight += weight;
    }
    if total_weight == 0.0 {
        0.0
    } else {
        weighted / total_weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    /// `Σ exp(-d / σ²)` over consecutive token pairs.
    pub raw: f64,
    /// `raw / (N - 1)`, or 0 for fewer than two tokens.
    pub mean: f64,
}

/// Coherence over consecutive tokens with cosine distance under `provider`.
pub fn coherence_raw(
    tokens: &[String],
    provider: &dyn EmbeddingProvider,
    sigma: f64,
) -> Result<Coherence, MetricsError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricsError::InvalidSigma(sigma));
    }
    if tokens.len() < 2 {
        return Ok(Coherence { raw: 0.0, mean: 0.0 });
    }
    let vectors = provider.embed_batch(tokens)?;
    let raw: f64 = vectors
        .windows(2)
        .map(|pair| {
            let sim = cosine(pair[0].values(), pair[1].values()).unwrap_or(0.0);
            let distance = (1.0 - sim).max(0.0);
            (-distance / (sigma * sigma)).exp()
        })
        .sum();
    Ok(Coherence {
        raw,
        mean: raw / (tokens.len() - 1) as f64,
    })
}

/// Document frequencies over a sentence corpus with
/// `idf(t) = ln(N / (1 + df(t))) + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    n_docs: u64,
    df: BTreeMap<String, u64>,
}

impl TfIdfModel {
    pub fn train<D, S>(documents: impl IntoIterator<Item = D>) -> Self
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut model = TfIdfModel::default();
        for doc in documents {
            model.n_docs += 1;
            let terms: BTreeSet<&str> = doc.as_ref().iter().map(|t| t.as_ref()).collect();
            for term in terms {
                *model.df.entry(term.to_string()).or_default() += 1;
            }
        }
        model
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Unseen terms get `ln(N) + 1`.
    pub fn idf(&self, term: &str) -> Result<f64, MetricsError> {
        if self.n_docs == 0 {
            return Err(MetricsError::Untrained("tf-idf"));
        }
        let n = self.n_docs as f64;
        Ok(match self.df.get(term) {
            Some(df) => (n / (1.0 + *df as f64)).ln() + 1.0,
            None => n.ln() + 1.0,
        })
    }
}

/// `ln(1 + Σ tf·idf)` over the response's distinct terms.
pub fn informativeness_raw<S: AsRef<str>>(
    tokens: &[S],
    model: &TfIdfModel,
) -> Result<f64, MetricsError> {
    if model.n_docs == 0 {
        return Err(MetricsError::Untrained("tf-idf"));
    }
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_ref()).or_default() += 1;
    }
    let mut total = 0.0;
    for (term, count) in tf {
        total += count as f64 * model.idf(term)?;
    }
    Ok((1.0 + total).ln())
}

const KEY_SEP: char = '\u{1f}';

/// Add-one smoothed n-gram model. Sequences are counted within documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramModel {
    n: usize,
    vocabulary: BTreeSet<String>,
    /// Counts of every k-gram for k in 1..=n, keyed by tokens joined with U+001F.
    counts: BTreeMap<String, u64>,
    total_tokens: u64,
}

impl NgramModel {
    pub fn new(n: usize) -> Result<Self, MetricsError> {
        if n == 0 {
            return Err(MetricsError::InvalidOrder);
        }
        Ok(NgramModel {
            n,
            vocabulary: BTreeSet::new(),
            counts: BTreeMap::new(),
            total_tokens: 0,
        })
    }

    pub fn train<D, S>(n: usize, documents: impl IntoIterator<Item = D>) -> Result<Self, MetricsError>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut model = NgramModel::new(n)?;
        for doc in documents {
            let doc: Vec<&str> = doc.as_ref().iter().map(|s| s.as_ref()).collect();
            model.total_tokens += doc.len() as u64;
            for t in &doc {
                model.vocabulary.insert(t.to_string());
            }
            for k in 1..=n {
                for gram in doc.windows(k) {
                    *model.counts.entry(join(gram)).or_default() += 1;
                }
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn count(&self, gram: &[&str]) -> u64 {
        self.counts.get(&join(gram)).copied().unwrap_or(0)
    }

    fn check_trained(&self) -> Result<(), MetricsError> {
        if self.vocabulary.is_empty() {
            Err(MetricsError::Untrained("n-gram"))
        } else {
            Ok(())
        }
    }

    /// `P(w | history)` using up to `n - 1` trailing history tokens.
    pub fn probability(&self, history: &[&str], word: &str) -> Result<f64, MetricsError> {
        self.check_trained()?;
        let v = self.vocabulary.len() as f64;
        let keep = history.len().min(self.n - 1);
        let history = &history[history.len() - keep..];
        if history.is_empty() {
            let c = self.count(&[word]) as f64;
            return Ok((c + 1.0) / (self.total_tokens as f64 + v));
        }
        let mut gram = history.to_vec();
        gram.push(word);
        let joint = self.count(&gram) as f64;
        let context = self.count(history) as f64;
        Ok((joint + 1.0) / (context + v))
    }
}

fn join<S: AsRef<str>>(gram: &[S]) -> String {
    let mut key = String::new();
    for (i, t) in gram.iter().enumerate() {
        if i > 0 {
            key.push(KEY_SEP);
        }
        key.push_str(t.as_ref());
    }
    key
}

/// Mean per-position conditional probability.
pub fn fluency_raw<S: AsRef<str>>(tokens: &[S], model: &NgramModel) -> Result<f64, MetricsError> {
    model.check_trained()?;
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let words: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    let mut total = 0.0;
    for i in 0..words.len() {
        total += model.probability(&words[..i], words[i])?;
    }
    Ok(total / words.len() as f64)
}

/// Raw-to-1..5 bounds. JSON shape:
/// `{"empathy":[lo,hi], "coherence":[lo,hi], "informativeness":[lo,hi], "fluency":[lo,hi], "sigma": s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibration {
    pub empathy: (f64, f64),
    pub coherence: (f64, f64),
    pub informativeness: (f64, f64),
    pub fluency: (f64, f64),
    pub sigma: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            empathy: (0.0, 1.0),
            coherence: (0.0, 1.0),
            informativeness: (0.0, 51f64.ln()),
            fluency: (0.0, 0.05),
            sigma: 1.0,
        }
    }
}

impl Calibration {
    pub fn bounds(&self, metric: Metric) -> (f64, f64) {
        match metric {
            Metric::Empathy => self.empathy,
            Metric::Coherence => self.coherence,
            Metric::Informativeness => self.informativeness,
            Metric::Fluency => self.fluency,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for metric in Metric::ALL {
            let (lo, hi) = self.bounds(metric);
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(MetricsError::InvalidCalibration { metric, lo, hi });
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(MetricsError::InvalidSigma(self.sigma));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, crate::Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let cal: Calibration =
            serde_json::from_str(&text).map_err(|e| crate::Error::config(path, e))?;
        cal.validate()?;
        Ok(cal)
    }
}

/// `1 + 4 · clamp((raw - lo) / (hi - lo), 0, 1)`.
pub fn calibrate(raw: f64, metric: Metric, calibration: &Calibration) -> Result<f64, MetricsError> {
    let (lo, hi) = calibration.bounds(metric);
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(MetricsError::InvalidCalibration { metric, lo, hi });
    }
    let t = ((raw - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(SCORE_MIN + (SCORE_MAX - SCORE_MIN) * t)
}

/// Arithmetic mean of `metric_fn` over the responses.
pub fn average_metric<T, F>(responses: &[T], metric_fn: F) -> Result<f64, MetricsError>
where
    F: Fn(&T) -> f64,
{
    if responses.is_empty() {
        return Err(MetricsError::NoResponses);
    }
    Ok(responses.iter().map(metric_fn).sum::<f64>() / responses.len() as f64)
}

/// `(E + C + I + F) / 4` of calibrated scores.
pub fn overall_score(e: f64, c: f64, i: f64, f: f64) -> Result<f64, MetricsError> {
    for v in [e, c, i, f] {
        if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
            return Err(MetricsError::OutOfRange(v));
        }
    }
    Ok((e + c + i + f) / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub empathy_raw: f64,
    pub coherence_raw: f64,
    pub coherence_mean: f64,
    pub informativeness_raw: f64,
    pub fluency_raw: f64,
    pub empathy: f64,
    pub coherence: f64,
    pub informativeness: f64,
    pub fluency: f64,
    pub overall: f64,
}

impl QualityScores {
    pub fn calibrated(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Empathy => self.empathy,
            Metric::Coherence => self.coherence,
            Metric::Informativeness => self.informativeness,
            Metric::Fluency => self.fluency,
        }
    }

    /// Field-wise mean of a non-empty set of scores, `overall` recomputed
    /// from the averaged calibrated values.
    pub fn average(scores: &[QualityScores]) -> Result<QualityScores, MetricsError> {
        let avg = |f: fn(&QualityScores) -> f64| average_metric(scores, f);
        let empathy = avg(|s| s.empathy)?;
        let coherence = avg(|s| s.coherence)?;
        let informativeness = avg(|s| s.informativeness)?;
        let fluency = avg(|s| s.fluency)?;
        Ok(QualityScores {
            empathy_raw: avg(|s| s.empathy_raw)?,
            coherence_raw: avg(|s| s.coherence_raw)?,
            coherence_mean: avg(|s| s.coherence_mean)?,
            informativeness_raw: avg(|s| s.informativeness_raw)?,
            fluency_raw: avg(|s| s.fluency_raw)?,
            empathy,
            coherence,
            informativeness,
            fluency,
            overall: overall_score(empathy, coherence, informativeness, fluency)?,
        })
    }
}

/// Trained models plus calibration needed to score responses.
#[derive(Clone)]
pub struct Scorer {
    lexicons: Lexicons,
    provider: Arc<dyn EmbeddingProvider>,
    tfidf: TfIdfModel,
    ngram: NgramModel,
    calibration: Calibration,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("provider", &self.provider.name())
            .field("tfidf_docs", &self.tfidf.n_docs())
            .field("ngram_order", &self.ngram.order())
            .field("calibration", &self.calibration)
            .finish()
    }
}

impl Scorer {
    pub fn new(
        lexicons: Lexicons,
        provider: Arc<dyn EmbeddingProvider>,
        tfidf: TfIdfModel,
        ngram: NgramModel,
        calibration: Calibration,
    ) -> Result<Self, MetricsError> {
        calibration.validate()?;
        Ok(Scorer {
            lexicons,
            provider,
            tfidf,
            ngram,
            calibration,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn tfidf(&self) -> &TfIdfModel {
        &self.tfidf
    }

    pub fn ngram(&self) -> &NgramModel {
        &self.ngram
    }

    pub fn score(&self, response: &str) -> Result<QualityScores, MetricsError> {
        let tokens = tokenize(response);
        let cal = &self.calibration;
        let empathy_raw = empathy_raw(&tokens, &self.lexicons);
        let coherence = coherence_raw(&tokens, self.provider.as_ref(), cal.sigma)?;
        let informativeness_raw = informativeness_raw(&tokens, &self.tfidf)?;
        let fluency_raw = fluency_raw(&tokens, &self.ngram)?;
        let empathy = calibrate(empathy_raw, Metric::Empathy, cal)?;
        let coherence_cal = calibrate(coherence.mean, Metric::Coherence, cal)?;
        let informativeness = calibrate(informativeness_raw, Metric::Informativeness, cal)?;
        let fluency = calibrate(fluency_raw, Metric::Fluency, cal)?;
        Ok(QualityScores {
            empathy_raw,
            coherence_raw: coherence.raw,
            coherence_mean: coherence.mean,
            informativeness_raw,
            fluency_raw,
            empathy,
            coherence: coherence_cal,
            informativeness,
            fluency,
            overall: overall_score(empathy, coherence_cal, informativeness, fluency)?,
        })
    }
}
