//! `dpse` command-line surface.
//!
//! Every pipeline stage is scriptable: scoring, ingestion, dataset
//! expansion, the two training stages, the closed evolution loop, the
//! synthetic-user simulation, probe evaluation, and the gradient audit.
//!
//! Standard output carries data only (JSON Lines); diagnostics go to
//! standard error. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numeric error.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Deserialize;

use dpse_core::backends::{
    ExternalGeneratorBackend, ExternalTopicBackend, KeywordTopicBackend, LexiconSentiment,
    TrigramHashEmbedder,
};
use dpse_core::constraint::{satisfaction_score, score_signals, SignalBackends};
use dpse_core::expansion::{
    expand_by_preference, expand_by_topic, read_pairs_jsonl, read_sft_jsonl, write_pairs_jsonl,
    write_sft_jsonl, CensorScorer, ExpansionContext,
};
use dpse_core::fusion::FusionParameters;
use dpse_core::memory::{MemoryPool, TopicClassifier};
use dpse_core::orchestrator::{
    evaluate, read_probes_jsonl, AblationFlags, Backends, EvolutionConfig, IngestEvent,
    Orchestrator, UserProfile,
};
use dpse_core::policy::PolicyModel;
use dpse_core::signal::{extract_signals, Interaction, SignalVector};
use dpse_core::trainer::{
    auto_config, dpo_train, run_gradcheck, sft_train, DatasetStats, DpoOptions, GradCheckConfig,
    ResourceBudget, TrainingConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "dpse", version, about = "Dual-phase self-evolution pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score interactions: full fusion state per input line.
    Score(ScoreArgs),
    /// Score, classify, and store interactions into a run directory.
    Ingest(IngestArgs),
    /// Build the SFT and preference datasets from a memory log.
    Expand(ExpandArgs),
    /// Supervised fine-tuning on an SFT dataset.
    TrainSft(TrainSftArgs),
    /// Weighted direct preference optimization on a pair dataset.
    TrainDpo(TrainDpoArgs),
    /// Ingest a log and run an evolution round at every trigger.
    Evolve(EvolveArgs),
    /// Drive the closed loop with the synthetic user.
    Simulate(SimulateArgs),
    /// Evaluate a model against a probe set.
    Eval(EvalArgs),
    /// Audit the analytic wDPO gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Configuration file (JSON); falls back to $DPSE_CONFIG, then defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fusion checkpoint; defaults to the bundled reference checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Interactions JSONL ("-" for standard input).
    #[arg(long, default_value = "-")]
    input: String,
    /// Stop after signal extraction and emit raw signal vectors.
    #[arg(long)]
    signals_only: bool,
    /// Tolerated malformed input lines before aborting with a data error.
    #[arg(long, default_value_t = 0)]
    max_errors: usize,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    input: String,
    /// Fresh run directory for the memory log and dead letters.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExpandArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Memory log (JSON Lines) to replay.
    #[arg(long)]
    memory: PathBuf,
    /// Output directory for sft.jsonl and pairs.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Expand the whole log instead of only the pending batch.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainSftArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// SFT dataset (JSON Lines).
    #[arg(long)]
    data: PathBuf,
    /// Input model checkpoint; a fresh model is built from the dataset
    /// vocabulary when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics file (JSON Lines).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct TrainDpoArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Preference pair dataset (JSON Lines).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Accept a model that skipped the SFT stage.
    #[arg(long)]
    allow_unstaged: bool,
    /// Disable weight-proportional minibatch sampling.
    #[arg(long)]
    no_weighted_sampling: bool,
    /// Disable weighted loss terms.
    #[arg(long)]
    no_weighted_loss: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    input: String,
    #[arg(long)]
    run_dir: PathBuf,
    /// Probe set for per-round evaluation.
    #[arg(long)]
    probes: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    run_dir: PathBuf,
    /// Evolution rounds to complete; 0 writes the manifest only.
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable a module (repeatable): censor, expansion, evolution, sft, po.
    #[arg(long = "ablate", value_name = "MODULE")]
    ablate: Vec<String>,
    /// User profile file (JSON); defaults to the bundled profile.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    probes: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Fault injection: perturb the finite-difference loss by this factor
    /// (the audit must then fail).
    #[arg(long)]
    perturb_loss: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let result = match cli.command {
        Command::Score(args) => cmd_score(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Expand(args) => cmd_expand(args),
        Command::TrainSft(args) => cmd_train_sft(args),
        Command::TrainDpo(args) => cmd_train_dpo(args),
        Command::Evolve(args) => cmd_evolve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(EXIT_NUMERIC)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_config(common: &CommonConfig) -> dpse_core::Result<EvolutionConfig> {
    if let Some(path) = &common.config {
        return EvolutionConfig::load(path);
    }
    if let Ok(path) = std::env::var("DPSE_CONFIG") {
        if !path.is_empty() {
            return EvolutionConfig::load(Path::new(&path));
        }
    }
    Ok(EvolutionConfig::default())
}

fn load_checkpoint(common: &CommonConfig) -> dpse_core::Result<FusionParameters> {
    match &common.checkpoint {
        Some(path) => FusionParameters::load(path),
        None => Ok(FusionParameters::reference()),
    }
}

/// Resolve the run seed: take --seed, otherwise generate one from process
/// entropy and print it to standard error so the run stays replayable.
fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            let generated = dpse_core::seed::derive_seed(nanos, "cli", &[u64::from(std::process::id())]);
            eprintln!("seed: {generated} (pass --seed {generated} to replay)");
            generated
        }
    }
}

fn build_backends(cfg: &EvolutionConfig) -> dpse_core::Result<Backends> {
    let mut backends = Backends::builtin(&cfg.topics)?;
    let timeout = Duration::from_millis(cfg.external.timeout_ms);
    if let Ok(cmd) = std::env::var("DPSE_BACKEND_TOPIC") {
        if !cmd.is_empty() {
            backends.classifier = TopicClassifier::External {
                backend: ExternalTopicBackend::new(cmd, timeout),
                fallback: KeywordTopicBackend::new(cfg.topics.clone())?,
                retries: cfg.external.retries,
                samples: cfg.external.samples,
            };
        }
    }
    if let Ok(cmd) = std::env::var("DPSE_BACKEND_GENERATOR") {
        if !cmd.is_empty() {
            backends.generator = Box::new(ExternalGeneratorBackend::new(cmd, timeout));
        }
    }
    Ok(backends)
}

fn open_input(input: &str) -> dpse_core::Result<Box<dyn BufRead>> {
    if input == "-" {
        Ok(Box::new(std::io::stdin().lock()))
    } else {
        let f = std::fs::File::open(input)?;
        Ok(Box::new(std::io::BufReader::new(f)))
    }
}

/// One interaction line of the ingestion format. Unknown keys are ignored;
/// `dwell_level` takes precedence over `dwell_seconds`; a `signals` array
/// bypasses extraction entirely (stubbed scoring).
#[derive(Debug, Deserialize)]
struct IngestRecord {
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    comment: Option<String>,
    #[serde(default)]
    dwell_seconds: Option<f64>,
    #[serde(default)]
    dwell_level: Option<u8>,
    #[serde(default)]
    timestamp_ms: Option<i64>,
    #[serde(default)]
    signals: Option<[f64; 5]>,
}

/// Tracks per-session prior responses so the redundancy signal sees the
/// session history, in file order, guarded by timestamps.
#[derive(Default)]
struct SessionTracker {
    prior: BTreeMap<String, Vec<(i64, String)>>,
}

impl SessionTracker {
    fn interaction(&mut self, record: &IngestRecord, cfg: &EvolutionConfig) -> dpse_core::Result<Interaction> {
        let session_id = record.session_id.clone().unwrap_or_default();
        let query = record
            .query
            .clone()
            .ok_or_else(|| dpse_core::Error::InvalidInput("missing 'query'".into()))?;
        let response = record
            .response
            .clone()
            .ok_or_else(|| dpse_core::Error::InvalidInput("missing 'response'".into()))?;
        let dwell_level = match (record.dwell_level, record.dwell_seconds) {
            (Some(level), _) => level,
            (None, Some(secs)) => cfg.dwell.level(secs),
            (None, None) => 0,
        };
        let timestamp_ms = record.timestamp_ms.unwrap_or(0);
        let prior_responses = self
            .prior
            .get(&session_id)
            .map(|v| {
                v.iter()
                    .filter(|(ts, _)| *ts < timestamp_ms)
                    .map(|(_, r)| r.clone())
                    .collect()
            })
            .unwrap_or_default();
        let ix = Interaction {
            session_id: session_id.clone(),
            query,
            response: response.clone(),
            user_comment: record.comment.clone(),
            dwell_level,
            prior_responses,
            timestamp_ms,
        };
        ix.validate()?;
        self.prior.entry(session_id).or_default().push((timestamp_ms, response));
        Ok(ix)
    }
}

fn parse_ablations(flags: &[String]) -> dpse_core::Result<AblationFlags> {
    let mut ablations = AblationFlags::default();
    for flag in flags {
        match flag.as_str() {
            "censor" => ablations.disable_censor = true,
            "expansion" => ablations.disable_expansion = true,
            "evolution" => ablations.disable_evolution = true,
            "sft" => ablations.disable_sft = true,
            "po" => ablations.disable_po = true,
            other => {
                return Err(dpse_core::Error::InvalidInput(format!(
                    "unknown ablation '{other}' (expected censor|expansion|evolution|sft|po)"
                )))
            }
        }
    }
    Ok(ablations)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_score(args: ScoreArgs) -> dpse_core::Result<ExitCode> {
    let cfg = load_config(&args.common)?;
    let params = load_checkpoint(&args.common)?;
    let embedder = TrigramHashEmbedder::default();
    let sentiment = LexiconSentiment;
    let praise = dpse_core::signal::PraiseRules::default();
    let signal_backends = SignalBackends { embedder: &embedder, sentiment: &sentiment, praise: &praise };

    let reader = open_input(&args.input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut sessions = SessionTracker::default();
    let mut errors = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: dpse_core::Result<String> = (|| {
            let record: IngestRecord = serde_json::from_str(&line)
                .map_err(|e| dpse_core::Error::InvalidInput(format!("line {}: {e}", lineno + 1)))?;
            if let Some(values) = record.signals {
                let vector = SignalVector::from_array(values)?;
                if args.signals_only {
                    return Ok(serde_json::to_string(&vector)?);
                }
                let state = score_signals(&vector, &params, &cfg.constraint)?;
                return Ok(serde_json::to_string(&state)?);
            }
            let ix = sessions.interaction(&record, &cfg)?;
            if args.signals_only {
                let extracted = extract_signals(&ix, &praise, &embedder, &sentiment)?;
                return Ok(serde_json::to_string(&extracted.vector)?);
            }
            let state = satisfaction_score(&ix, &params, &cfg.constraint, &signal_backends)?;
            Ok(serde_json::to_string(&state)?)
        })();
        match outcome {
            Ok(json) => writeln!(out, "{json}")?,
            Err(e) => {
                errors += 1;
                eprintln!("warning: {e}");
                if errors > args.max_errors {
                    out.flush()?;
                    return Err(dpse_core::Error::InvalidInput(format!(
                        "{errors} malformed input lines exceed --max-errors {}",
                        args.max_errors
                    )));
                }
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn fresh_run_dir(dir: &Path) -> dpse_core::Result<()> {
    if dir.join("memory.jsonl").exists() {
        return Err(dpse_core::Error::InvalidInput(format!(
            "run directory {} already holds a memory log; use a fresh directory",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> dpse_core::Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    cfg.seeds.master = resolve_seed(args.seed);
    let params = load_checkpoint(&args.common)?;
    fresh_run_dir(&args.run_dir)?;
    let backends = build_backends(&cfg)?;
    let mut orch = Orchestrator::new(&args.run_dir, cfg.clone(), None, None, params, backends)?;

    let reader = open_input(&args.input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut sessions = SessionTracker::default();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = match serde_json::from_str::<IngestRecord>(&line) {
            Ok(record) => match sessions.interaction(&record, &cfg) {
                Ok(ix) => orch.ingest(&ix)?,
                Err(e) => {
                    orch.dead_letter(&e.to_string(), &line)?;
                    IngestEvent::Quarantined { reason: e.to_string() }
                }
            },
            Err(e) => {
                let reason = format!("line {}: {e}", lineno + 1);
                orch.dead_letter(&reason, &line)?;
                IngestEvent::Quarantined { reason }
            }
        };
        writeln!(out, "{}", serde_json::to_string(&event)?)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_expand(args: ExpandArgs) -> dpse_core::Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    let seed = resolve_seed(args.seed);
    cfg.expansion.generator_seed = seed;
    let params = load_checkpoint(&args.common)?;
    let backends = build_backends(&cfg)?;

    let mut pool = MemoryPool::replay(&args.memory, cfg.trigger_threshold)?;
    let batch = if args.all {
        pool.entries().iter().filter(|e| !e.excluded).cloned().collect()
    } else {
        pool.snapshot()
    };
    if batch.is_empty() {
        return Err(dpse_core::Error::InvalidInput(
            "no included entries to expand (try --all for the whole log)".into(),
        ));
    }

    let scorer = CensorScorer {
        params: &params,
        constraint: &cfg.constraint,
        embedder: &backends.embedder,
        sentiment: &backends.sentiment,
    };
    let ctx = ExpansionContext {
        generator: backends.generator.as_ref(),
        scorer: &scorer,
        classifier: &backends.classifier,
        embedder: &backends.embedder,
        validation: &cfg.validation,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let sft = expand_by_topic(&batch, &cfg.expansion, &ctx)?;
    let pairs = expand_by_preference(&batch, &cfg.expansion, &ctx)?;
    write_sft_jsonl(&args.out_dir.join("sft.jsonl"), &sft)?;
    write_pairs_jsonl(&args.out_dir.join("pairs.jsonl"), &pairs)?;

    let summary = serde_json::json!({
        "batch_entries": batch.len(),
        "n_sft_examples": sft.len(),
        "n_pairs": pairs.len(),
        "seed": seed,
        "out_dir": args.out_dir,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn write_metrics(path: &Path, rows: &[serde_json::Value]) -> dpse_core::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn training_config(
    stats: DatasetStats,
    seed: u64,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
) -> TrainingConfig {
    let mut cfg = auto_config(&ResourceBudget::default(), &stats);
    if let Some(lr) = learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    if let Some(e) = max_epochs {
        cfg.max_epochs = e;
    }
    cfg.seed = seed;
    cfg
}

fn cmd_train_sft(args: TrainSftArgs) -> dpse_core::Result<ExitCode> {
    let dataset = read_sft_jsonl(&args.data)?;
    if dataset.is_empty() {
        return Err(dpse_core::Error::InvalidInput("empty SFT dataset".into()));
    }
    let model = match &args.model {
        Some(path) => PolicyModel::load(path)?,
        None => {
            let corpus: Vec<String> = dataset
                .iter()
                .flat_map(|ex| [ex.instruction.clone(), ex.output.clone()])
                .collect();
            PolicyModel::from_corpus(corpus.iter().map(|s| s.as_str()))?
        }
    };
    let seed = resolve_seed(args.seed);
    let cfg = training_config(
        DatasetStats { n_examples: dataset.len(), vocab_size: model.vocab_size(), token_frequencies: None },
        seed,
        args.learning_rate,
        args.batch_size,
        args.max_epochs,
    );
    let out = sft_train(&model, &dataset, &cfg)?;
    out.model.save(&args.out)?;
    if let Some(metrics) = &args.metrics {
        let rows: Vec<serde_json::Value> = out
            .loss_curve
            .iter()
            .enumerate()
            .map(|(epoch, loss)| serde_json::json!({ "epoch": epoch, "loss": loss }))
            .collect();
        write_metrics(metrics, &rows)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "stage": "sft",
            "examples": dataset.len(),
            "epochs": cfg.max_epochs,
            "final_loss": out.loss_curve.last(),
            "model": args.out,
            "version": out.model.version,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_dpo(args: TrainDpoArgs) -> dpse_core::Result<ExitCode> {
    let pairs = read_pairs_jsonl(&args.data)?;
    if pairs.is_empty() {
        return Err(dpse_core::Error::InvalidInput("empty preference dataset".into()));
    }
    let model = PolicyModel::load(&args.model)?;
    let seed = resolve_seed(args.seed);
    let cfg = training_config(
        DatasetStats { n_examples: pairs.len(), vocab_size: model.vocab_size(), token_frequencies: None },
        seed,
        args.learning_rate,
        args.batch_size,
        args.max_epochs,
    );
    let opts = DpoOptions {
        weighted_sampling: !args.no_weighted_sampling,
        weighted_loss: !args.no_weighted_loss,
        allow_unstaged: args.allow_unstaged,
    };
    let out = dpo_train(&model, &pairs, &cfg, &opts)?;
    out.model.save(&args.out)?;
    if let Some(metrics) = &args.metrics {
        let rows: Vec<serde_json::Value> = out
            .loss_curve
            .iter()
            .zip(&out.margin_curve)
            .enumerate()
            .map(|(epoch, (loss, margin))| {
                serde_json::json!({ "epoch": epoch, "loss": loss, "margin": margin })
            })
            .collect();
        write_metrics(metrics, &rows)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "stage": "dpo",
            "pairs": pairs.len(),
            "epochs": cfg.max_epochs,
            "final_loss": out.loss_curve.last(),
            "final_margin": out.margin_curve.last(),
            "model": args.out,
            "version": out.model.version,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evolve(args: EvolveArgs) -> dpse_core::Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    cfg.seeds.master = resolve_seed(args.seed);
    let params = load_checkpoint(&args.common)?;
    fresh_run_dir(&args.run_dir)?;
    let backends = build_backends(&cfg)?;
    let probes = read_probes_jsonl(&args.probes)?;
    if probes.is_empty() {
        return Err(dpse_core::Error::InvalidInput("empty probe set".into()));
    }
    let mut orch = Orchestrator::new(&args.run_dir, cfg.clone(), None, None, params, backends)?;
    orch.set_probes(probes)?;

    let reader = open_input(&args.input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut sessions = SessionTracker::default();
    let mut baseline = None;
    let mut reports = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = match serde_json::from_str::<IngestRecord>(&line) {
            Ok(record) => match sessions.interaction(&record, &cfg) {
                Ok(ix) => orch.ingest(&ix)?,
                Err(e) => {
                    orch.dead_letter(&e.to_string(), &line)?;
                    IngestEvent::Quarantined { reason: e.to_string() }
                }
            },
            Err(e) => {
                let reason = format!("line {}: {e}", lineno + 1);
                orch.dead_letter(&reason, &line)?;
                IngestEvent::Quarantined { reason }
            }
        };
        writeln!(out, "{}", serde_json::to_string(&event)?)?;
        if let IngestEvent::Stored { trigger: true, .. } = event {
            if baseline.is_none() {
                baseline = Some(orch.evaluate_current()?);
            }
            let report = orch.run_evolution_round()?;
            writeln!(out, "{}", serde_json::to_string(&report)?)?;
            reports.push(report);
        }
    }
    if let Some(base) = baseline {
        orch.write_rounds_csv(&base, &reports)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> dpse_core::Result<ExitCode> {
    let mut cfg = load_config(&args.common)?;
    cfg.seeds.master = resolve_seed(args.seed);
    cfg.ablations = parse_ablations(&args.ablate)?;
    fresh_run_dir(&args.run_dir)?;
    let profile = match &args.profile {
        Some(path) => serde_json::from_str::<UserProfile>(&std::fs::read_to_string(path)?)?,
        None => UserProfile::default(),
    };

    if args.rounds == 0 {
        // Manifest only: construct the run directory without feeding data.
        let backends = build_backends(&cfg)?;
        let params = load_checkpoint(&args.common)?;
        Orchestrator::new(&args.run_dir, cfg, Some(profile), None, params, backends)?;
        return Ok(ExitCode::SUCCESS);
    }

    let reports = Orchestrator::simulate_rounds(&args.run_dir, cfg, profile, args.rounds)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for report in &reports {
        writeln!(out, "{}", serde_json::to_string(report)?)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> dpse_core::Result<ExitCode> {
    let cfg = load_config(&args.common)?;
    let params = load_checkpoint(&args.common)?;
    let model = PolicyModel::load(&args.model)?;
    let probes = read_probes_jsonl(&args.probes)?;
    let embedder = TrigramHashEmbedder::default();
    let sentiment = LexiconSentiment;
    let scorer = CensorScorer {
        params: &params,
        constraint: &cfg.constraint,
        embedder: &embedder,
        sentiment: &sentiment,
    };
    let metrics = evaluate(&model, &probes, &scorer, &cfg.evaluation)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> dpse_core::Result<ExitCode> {
    if args.trials == 0 {
        // Usage error class: report like clap would and exit 1.
        let mut cmd = Cli::command();
        eprintln!("error: --trials must be at least 1");
        let _ = cmd.print_help();
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let seed = resolve_seed(args.seed);
    let report = run_gradcheck(&GradCheckConfig {
        seed,
        trials: args.trials,
        perturb_loss: args.perturb_loss,
    })?;
    println!("{}", serde_json::to_string(&report)?);
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(worst) = &report.worst {
            eprintln!(
                "gradcheck failed: trial {} param {} analytic {} vs numeric {} (rel err {:.3e}); replay with --seed {seed} --trials {}",
                worst.trial, worst.param_index, worst.analytic, worst.numeric, worst.rel_err, args.trials
            );
        }
        Ok(ExitCode::from(EXIT_NUMERIC))
    }
}
