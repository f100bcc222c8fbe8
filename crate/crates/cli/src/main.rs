use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eaef_core::generation::{
    chat_turn, BackendConfig, ChatContext, ChatSession, GenerationConfig, RetrievalConfig,
    DEFAULT_HISTORY_WINDOW,
};
use eaef_core::harness::{emit_table, run_eval, EvalConfig, TableFormat};
use eaef_core::pipeline::{read_manifest, Engine, EngineConfig};
use eaef_core::{Calibration, FusionConfig, Level, LexiconToggles, Lexicons, ProviderConfig, QualityScores};
use eaef_cli::config::ServiceConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "eaef", version, about = "Emotion-aware retrieval, generation and response scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, embed and index a transcript corpus.
    Ingest(IngestArgs),
    /// Search the index.
    Query(QueryArgs),
    /// Chat against the index (one turn per stdin line, or --message).
    Chat(ChatArgs),
    /// Score responses read from a file.
    Score(ScoreArgs),
    /// Run a with/without-lexicon evaluation and write a report.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    lexicons: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    no_nrc: bool,
    #[arg(long)]
    no_vader: bool,
    #[arg(long)]
    no_swn: bool,
    /// Disable synonym fallback.
    #[arg(long)]
    no_syn: bool,
    #[arg(long, default_value_t = eaef_core::embedding::DEFAULT_DIMENSION)]
    dimension: usize,
    #[arg(long, default_value_t = eaef_core::embedding::DEFAULT_HASH_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Calibration JSON; built-in defaults otherwise.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Sentence,
    Session,
    Any,
}

impl LevelArg {
    fn level(self) -> Option<Level> {
        match self {
            LevelArg::Sentence => Some(Level::Sentence),
            LevelArg::Session => Some(Level::Session),
            LevelArg::Any => None,
        }
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    index: PathBuf,
    /// Lexicon directory; defaults to the one recorded at ingest.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = eaef_core::vecstore::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = eaef_core::vecstore::DEFAULT_TAU, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = LevelArg::Sentence)]
    level: LevelArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Args)]
struct ChatArgs {
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    backend: BackendArg,
    #[arg(long)]
    message: Option<String>,
    #[arg(long)]
    affect_in_prompt: bool,
    #[arg(long, default_value_t = eaef_core::vecstore::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_HISTORY_WINDOW)]
    history: usize,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    index: IndexArgs,
    /// JSON array of strings, or one response per line.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "md")]
    format: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn open_engine(args: &IndexArgs) -> anyhow::Result<Engine> {
    let state = eaef_core::pipeline::state_path(&args.index);
    let dir = match &args.lexicons {
        Some(d) => d.clone(),
        None => {
            let text = std::fs::read_to_string(&state)
                .with_context(|| format!("reading {}", state.display()))?;
            let saved: serde_json::Value = serde_json::from_str(&text)?;
            let config: EngineConfig = serde_json::from_value(saved["config"].clone())?;
            match config.lexicon_dir {
                Some(d) => d,
                None => bail!("index has no recorded lexicon directory; pass --lexicons"),
            }
        }
    };
    let lexicons = Lexicons::load_dir(&dir)?;
    Ok(Engine::open(&args.index, lexicons)?)
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    let lexicons = Lexicons::load_dir(&args.lexicons)?;
    let calibration = match &args.calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    let config = EngineConfig {
        provider: ProviderConfig::DeterministicHash {
            dimension: args.dimension,
            seed: args.seed,
        },
        fusion: FusionConfig {
            lambda: args.lambda,
            heads: args.heads,
            ..FusionConfig::default()
        },
        toggles: LexiconToggles {
            nrc: !args.no_nrc,
            vader: !args.no_vader,
            wordnet_syn: !args.no_syn,
            sentiwordnet: !args.no_swn,
        },
        calibration,
        lexicon_dir: Some(absolute(&args.lexicons)),
        ..EngineConfig::default()
    };
    let transcripts = read_manifest(&args.manifest)?;
    let engine = Engine::ingest(config, lexicons, &transcripts)?;
    engine.save(&args.index)?;
    println!("{}", serde_json::to_string(&engine.stats())?);
    Ok(())
}

fn query(args: QueryArgs) -> anyhow::Result<()> {
    let engine = open_engine(&args.index)?;
    let cfg = RetrievalConfig {
        k: args.k,
        tau: args.tau,
        level: args.level.level(),
    };
    let r = engine.retrieve(&args.text, &cfg)?;
    let hits: Vec<_> = r
        .hits
        .iter()
        .map(|(h, rec)| json!({"segment_id": h.segment_id, "similarity": h.similarity, "text": rec.text}))
        .collect();
    println!("{}", serde_json::to_string_pretty(&json!({"hits": hits, "affect": r.affect}))?);
    Ok(())
}

fn chat(args: ChatArgs) -> anyhow::Result<()> {
    let engine = open_engine(&args.index)?;
    let backend = match args.backend {
        BackendArg::Mock => BackendConfig::Mock,
        BackendArg::Remote => BackendConfig::remote_from_env(),
    }
    .build()?;
    let mut cfg: GenerationConfig = engine.config().generation;
    cfg.retrieval.k = args.k;
    cfg.affect_in_prompt = args.affect_in_prompt;
    let ctx = ChatContext {
        index: engine.index(),
        encoder: engine.encoder(),
        backend: backend.as_ref(),
        scorer: engine.scorer(),
        config: cfg,
    };
    let mut session = ChatSession::new("cli", args.history);
    let mut turn = |message: &str| -> anyhow::Result<()> {
        let (g, scores) = chat_turn(&mut session, message, &ctx)?;
        println!(
            "{}",
            serde_json::to_string(&json!({"response": g.response, "scores": scores}))?
        );
        Ok(())
    };
    match &args.message {
        Some(m) => turn(m)?,
        None => {
            for line in std::io::stdin().lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                turn(&line)?;
                std::io::stdout().flush()?;
            }
        }
    }
    Ok(())
}

fn read_responses(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(list);
    }
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn score(args: ScoreArgs) -> anyhow::Result<()> {
    let engine = open_engine(&args.index)?;
    let responses = read_responses(&args.input)?;
    if responses.is_empty() {
        bail!("no responses in {}", args.input.display());
    }
    let scores = responses
        .iter()
        .map(|r| engine.score(r))
        .collect::<Result<Vec<_>, _>>()?;
    let average = QualityScores::average(&scores)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"scores": scores, "average": average}))?
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let format: TableFormat = args.format.parse()?;
    let config = EvalConfig::load(&args.config)?;
    let report = run_eval(&config)?;
    let text = emit_table(&report, format)?;
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    tracing::info!(hash = %report.content_hash(), rows = report.rows.len(), "report written");
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let config = ServiceConfig::load(&args.config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(eaef_cli::service::serve(config))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Chat(a) => chat(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
