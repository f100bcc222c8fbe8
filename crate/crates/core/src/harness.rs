//! With/without-lexicon evaluation runs, percent deltas and report tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{FusionConfig, ProviderConfig, DEFAULT_DIMENSION};
use crate::generation::{BackendConfig, GenerationConfig, RetrievalConfig};
use crate::lexicon::{LexiconToggles, Lexicons};
use crate::metrics::{Calibration, Metric, QualityScores};
use crate::pipeline::{read_manifest, Engine, EngineConfig, DEFAULT_NGRAM_ORDER};
use crate::segmentation::Level;
use crate::vecstore::{DEFAULT_K, DEFAULT_TAU};
use crate::{Error, Result};

/// A relative change in percent. A zero baseline has no defined change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentChange {
    Defined { exact: f64, rounded: i64 },
    Undefined,
}

impl PercentChange {
    pub fn exact(self) -> Option<f64> {
        match self {
            PercentChange::Defined { exact, .. } => Some(exact),
            PercentChange::Undefined => None,
        }
    }

    pub fn rounded(self) -> Option<i64> {
        match self {
            PercentChange::Defined { rounded, .. } => Some(rounded),
            PercentChange::Undefined => None,
        }
    }
}

impl fmt::Display for PercentChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PercentChange::Defined { rounded, .. } => write!(f, "{rounded:+}%"),
            PercentChange::Undefined => f.write_str("n/a"),
        }
    }
}

/// `100 · (value − baseline) / baseline`, also rounded to the nearest integer.
pub fn percent_change(baseline: f64, value: f64) -> PercentChange {
    if baseline == 0.0 || !baseline.is_finite() || !value.is_finite() {
        return PercentChange::Undefined;
    }
    let exact = 100.0 * (value - baseline) / baseline;
    PercentChange::Defined {
        exact,
        rounded: exact.round() as i64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub empathy: f64,
    pub coherence: f64,
    pub informativeness: f64,
    pub fluency: f64,
}

impl ReferenceRow {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Empathy => self.empathy,
            Metric::Coherence => self.coherence,
            Metric::Informativeness => self.informativeness,
            Metric::Fluency => self.fluency,
        }
    }

    /// Mean of the four metric columns.
    pub fn overall(&self) -> f64 {
        (self.empathy + self.coherence + self.informativeness + self.fluency) / 4.0
    }
}

/// Reference per-lexicon comparison, already in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDelta {
    pub model: String,
    pub comparison: String,
    pub baseline: String,
    pub empathy: i64,
    pub coherence: i64,
    pub informativeness: i64,
    pub fluency: i64,
}

/// Reference score grids: no-lexicon baseline, NRC-enriched, and
/// VADER-vs-other-lexicon delta rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTables {
    pub baseline: Vec<ReferenceRow>,
    pub nrc_enriched: Vec<ReferenceRow>,
    pub lexicon_deltas: Vec<ReferenceDelta>,
}

impl ReferenceTables {
    pub fn baseline_row(&self, model: &str) -> Option<&ReferenceRow> {
        self.baseline.iter().find(|r| r.model == model)
    }

    pub fn enriched_row(&self, model: &str) -> Option<&ReferenceRow> {
        self.nrc_enriched.iter().find(|r| r.model == model)
    }
}

const REFERENCE_TABLES: &str = include_str!("../resources/reference_tables.json");

pub fn load_reference_tables() -> ReferenceTables {
    serde_json::from_str(REFERENCE_TABLES).expect("embedded reference tables are valid JSON")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

/// Question set sorted by id.
pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut questions: Vec<Question> =
        serde_json::from_str(&text).map_err(|e| Error::config(path, e))?;
    questions.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(questions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalModel {
    pub name: String,
    #[serde(flatten)]
    pub backend: BackendConfig,
}

fn default_models() -> Vec<EvalModel> {
    vec![EvalModel {
        name: "mock".into(),
        backend: BackendConfig::Mock,
    }]
}

fn default_concurrency() -> usize {
    4
}

/// JSON-loadable eval settings. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub manifest: PathBuf,
    pub questions: PathBuf,
    pub lexicons: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<EvalModel>,
    #[serde(default)]
    pub lexicon_toggles: LexiconToggles,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub tau: f64,
    /// Calibration file; defaults apply when absent.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ngram")]
    pub ngram_order: usize,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_heads() -> usize {
    1
}

fn default_ngram() -> usize {
    DEFAULT_NGRAM_ORDER
}

impl EvalConfig {
    pub fn new(manifest: PathBuf, questions: PathBuf, lexicons: PathBuf) -> Self {
        EvalConfig {
            manifest,
            questions,
            lexicons,
            models: default_models(),
            lexicon_toggles: LexiconToggles::all(),
            lambda: default_lambda(),
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            calibration: None,
            seed: 0,
            dimension: DEFAULT_DIMENSION,
            heads: 1,
            ngram_order: DEFAULT_NGRAM_ORDER,
            max_concurrency: default_concurrency(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: EvalConfig = serde_json::from_str(&text).map_err(|e| Error::config(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.questions);
        resolve(&mut cfg.lexicons);
        if let Some(c) = cfg.calibration.as_mut() {
            resolve(c);
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }

    fn engine_config(&self, toggles: LexiconToggles, calibration: Calibration) -> EngineConfig {
        EngineConfig {
            provider: ProviderConfig::DeterministicHash {
                dimension: self.dimension,
                seed: self.seed,
            },
            fusion: FusionConfig {
                lambda: self.lambda,
                projection_seed: self.seed,
                heads: self.heads,
            },
            toggles,
            ngram_order: self.ngram_order,
            calibration,
            generation: GenerationConfig {
                retrieval: RetrievalConfig {
                    k: self.k,
                    tau: self.tau,
                    level: Some(Level::Sentence),
                },
                ..GenerationConfig::default()
            },
            lexicon_dir: Some(self.lexicons.clone()),
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub const BASELINE_CONFIGURATION: &str = "baseline";
pub const ENRICHED_CONFIGURATION: &str = "enriched";

/// Calibrated averages for one table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub empathy: f64,
    pub coherence: f64,
    pub informativeness: f64,
    pub fluency: f64,
    pub overall: f64,
}

impl From<&QualityScores> for RowScores {
    fn from(q: &QualityScores) -> Self {
        RowScores {
            empathy: q.empathy,
            coherence: q.coherence,
            informativeness: q.informativeness,
            fluency: q.fluency,
            overall: q.overall,
        }
    }
}

impl RowScores {
    pub fn columns(&self) -> [f64; 5] {
        [
            self.empathy,
            self.coherence,
            self.informativeness,
            self.fluency,
            self.overall,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub text: Option<String>,
    pub retrieved_ids: Vec<String>,
    pub scores: Option<QualityScores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub configuration: String,
    /// `None` when every question failed.
    pub scores: Option<RowScores>,
    pub scored: usize,
    pub failed: usize,
    pub responses: Vec<ResponseRecord>,
}

impl ReportRow {
    pub fn label(&self) -> String {
        format!("{} [{}]", self.model, self.configuration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: String,
    pub baseline: String,
    pub comparison: String,
    pub empathy: PercentChange,
    pub coherence: PercentChange,
    pub informativeness: PercentChange,
    pub fluency: PercentChange,
    pub overall: PercentChange,
}

impl DeltaRow {
    pub fn between(model: &str, base: &ReportRow, cmp: &ReportRow) -> DeltaRow {
        let pc = |f: fn(&RowScores) -> f64| match (&base.scores, &cmp.scores) {
            (Some(b), Some(c)) => percent_change(f(b), f(c)),
            _ => PercentChange::Undefined,
        };
        DeltaRow {
            model: model.to_string(),
            baseline: base.configuration.clone(),
            comparison: cmp.configuration.clone(),
            empathy: pc(|s| s.empathy),
            coherence: pc(|s| s.coherence),
            informativeness: pc(|s| s.informativeness),
            fluency: pc(|s| s.fluency),
            overall: pc(|s| s.overall),
        }
    }

    pub fn label(&self) -> String {
        format!("{} [{}] vs [{}]", self.model, self.comparison, self.baseline)
    }

    pub fn columns(&self) -> [PercentChange; 5] {
        [
            self.empathy,
            self.coherence,
            self.informativeness,
            self.fluency,
            self.overall,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<DeltaRow>,
}

impl EvalReport {
    pub fn empty() -> Self {
        EvalReport {
            meta: RunMeta {
                version: crate::VERSION.to_string(),
                config_hash: String::new(),
                seed: 0,
                questions: 0,
            },
            rows: Vec::new(),
            deltas: Vec::new(),
        }
    }

    /// SHA-256 over the score rows and deltas. Run metadata is excluded so
    /// two configurations that produce the same results hash equal.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&(&self.rows, &self.deltas)).expect("report serializes");
        hex_digest(&json)
    }
}

fn run_configuration(
    model: &EvalModel,
    configuration: &str,
    engine: &Engine,
    questions: &[Question],
    pool: &rayon::ThreadPool,
) -> Result<ReportRow> {
    let backend = model.backend.build()?;
    let responses: Vec<ResponseRecord> = pool.install(|| {
        questions
            .par_iter()
            .map(|q| {
                let outcome = engine
                    .generate(&q.text, &[], backend.as_ref())
                    .and_then(|g| {
                        let scores = engine.score(&g.response.text)?;
                        Ok((g, scores))
                    });
                match outcome {
                    Ok((g, scores)) => ResponseRecord {
                        question_id: q.id.clone(),
                        text: Some(g.response.text),
                        retrieved_ids: g.response.retrieved_ids,
                        scores: Some(scores),
                        error: None,
                    },
                    Err(e) => ResponseRecord {
                        question_id: q.id.clone(),
                        text: None,
                        retrieved_ids: Vec::new(),
                        scores: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let ok: Vec<QualityScores> = responses.iter().filter_map(|r| r.scores).collect();
    let scores = if ok.is_empty() {
        None
    } else {
        Some(RowScores::from(&QualityScores::average(&ok)?))
    };
    Ok(ReportRow {
        model: model.name.clone(),
        configuration: configuration.to_string(),
        scores,
        scored: ok.len(),
        failed: responses.len() - ok.len(),
        responses,
    })
}

/// For every model: generate and score all questions with every lexicon
/// off (baseline) and with the configured toggles (enriched), then
/// tabulate averages and enriched-vs-baseline deltas.
pub fn run_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    let questions = load_questions(&cfg.questions)?;
    if questions.is_empty() {
        return Err(Error::config(&cfg.questions, "question set is empty"));
    }
    let calibration = match &cfg.calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    let lexicons = Lexicons::load_dir(&cfg.lexicons)?;
    let transcripts = read_manifest(&cfg.manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_concurrency.max(1))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;

    let baseline = Engine::ingest(
        cfg.engine_config(LexiconToggles::none(), calibration),
        lexicons.clone(),
        &transcripts,
    )?;
    let enriched = Engine::ingest(
        cfg.engine_config(cfg.lexicon_toggles, calibration),
        lexicons,
        &transcripts,
    )?;

    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    for model in &cfg.models {
        let base = run_configuration(model, BASELINE_CONFIGURATION, &baseline, &questions, &pool)?;
        let enr = run_configuration(model, ENRICHED_CONFIGURATION, &enriched, &questions, &pool)?;
        deltas.push(DeltaRow::between(&model.name, &base, &enr));
        rows.push(base);
        rows.push(enr);
    }
    Ok(EvalReport {
        meta: RunMeta {
            version: crate::VERSION.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            questions: questions.len(),
        },
        rows,
        deltas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::Invalid(format!("unknown table format {other:?}"))),
        }
    }
}

pub const TABLE_COLUMNS: [&str; 7] = [
    "Model",
    "Empathy",
    "Coherence",
    "Informativeness",
    "Fluency",
    "Overall",
    "Failed",
];

fn signed_exact(d: PercentChange) -> String {
    match d {
        PercentChange::Defined { exact, .. } => format!("{exact:+}%"),
        PercentChange::Undefined => "n/a".to_string(),
    }
}

/// Renders a report. Score rows come first, delta rows after them.
pub fn emit_table(report: &EvalReport, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Invalid(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        TableFormat::Markdown => Ok(markdown(report)),
        TableFormat::Csv => csv_table(report),
    }
}

fn markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    let header: Vec<String> = TABLE_COLUMNS.iter().map(|s| s.to_string()).collect();
    out += &line(&header);
    out += &line(&vec!["---".to_string(); header.len()]);
    for row in &report.rows {
        let mut cells = vec![row.label()];
        match &row.scores {
            Some(s) => cells.extend(s.columns().iter().map(|v| format!("{v:.2}"))),
            None => cells.extend(std::iter::repeat_n("n/a".to_string(), 5)),
        }
        cells.push(row.failed.to_string());
        out += &line(&cells);
    }
    if !report.deltas.is_empty() {
        out.push('\n');
        out += &line(&header[..6]);
        out += &line(&vec!["---".to_string(); 6]);
        for d in &report.deltas {
            let mut cells = vec![d.label()];
            cells.extend(d.columns().iter().map(|c| c.to_string()));
            out += &line(&cells);
        }
    }
    out
}

fn csv_table(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let invalid = |e: csv::Error| Error::Invalid(e.to_string());
    w.write_record(TABLE_COLUMNS).map_err(invalid)?;
    for row in &report.rows {
        let mut cells = vec![row.label()];
        match &row.scores {
            Some(s) => cells.extend(s.columns().iter().map(|v| v.to_string())),
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        cells.push(row.failed.to_string());
        w.write_record(&cells).map_err(invalid)?;
    }
    for d in &report.deltas {
        let mut cells = vec![d.label()];
        cells.extend(d.columns().into_iter().map(signed_exact));
        cells.push(String::new());
        w.write_record(&cells).map_err(invalid)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_change_examples() {
        let d = percent_change(3.5, 5.0);
        assert_eq!(d.rounded(), Some(43));
        assert!((d.exact().unwrap() - 42.857142857142854).abs() < 1e-12);
        assert_eq!(percent_change(4.0, 5.0).rounded(), Some(25));
        assert_eq!(percent_change(2.0, 1.0).rounded(), Some(-50));
        assert_eq!(percent_change(7.0, 7.0).exact(), Some(0.0));
        assert_eq!(percent_change(0.0, 1.0), PercentChange::Undefined);
        assert_eq!(percent_change(3.5, 5.0).to_string(), "+43%");
        assert_eq!(percent_change(5.0, 1.0).to_string(), "-80%");
        assert_eq!(PercentChange::Undefined.to_string(), "n/a");
    }

    #[test]
    fn reference_tables_load() {
        let t = load_reference_tables();
        assert_eq!(t.baseline_row("ChatGPT 4").unwrap().empathy, 5.0);
        assert_eq!(t.enriched_row("Llama 2 13B").unwrap().empathy, 1.0);
        assert_eq!(t.baseline.len(), 4);
        assert_eq!(t.nrc_enriched.len(), 4);
        assert_eq!(t.lexicon_deltas.len(), 6);
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = EvalReport::empty();
        let csv = emit_table(&r, TableFormat::Csv).unwrap();
        assert_eq!(csv, "Model,Empathy,Coherence,Informativeness,Fluency,Overall,Failed\n");
        let md = emit_table(&r, TableFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
        assert!(md.starts_with("| Model | Empathy |"));
    }

    #[test]
    fn unknown_format() {
        assert!("xml".parse::<TableFormat>().is_err());
        assert_eq!("md".parse::<TableFormat>().unwrap(), TableFormat::Markdown);
    }
}
