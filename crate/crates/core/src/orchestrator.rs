//! The closed evolution loop.
//!
//! ingest -> score -> classify -> store -> trigger -> expand -> SFT -> wDPO
//! -> evaluate, plus the synthetic-user simulator that drives the whole
//! pipeline at desk scale. Every stochastic consumer draws its seed as
//! hash(master, component, indices), so a run is reproducible end to end
//! from the master seed alone.
//!
//! A run directory holds the manifest, the memory log, a dead-letter file
//! for quarantined interactions, per-round datasets, reports and model
//! checkpoints, and a plot-ready `rounds.csv`. Model swaps are atomic
//! (write-temp-then-rename); a failed round leaves the active checkpoint
//! untouched.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::topic::{default_topics, KeywordTopicBackend, TopicSpec};
use crate::backends::{GeneratorBackend, LexiconSentiment, RuleParaphraser, TrigramHashEmbedder};
use crate::constraint::{satisfaction_score, ConstraintConfig, SignalBackends};
use crate::error::{Error, Result};
use crate::expansion::{
    expand_by_preference, expand_by_topic, CensorScorer, ExpansionConfig, ExpansionContext,
    PreferencePair, ResponseScorer, SftExample, ValidationConfig,
};
use crate::fusion::FusionParameters;
use crate::memory::{classify_topic, MemoryPool, TopicClassifier};
use crate::policy::PolicyModel;
use crate::seed::{derive_seed, Rng};
use crate::signal::{Interaction, PraiseRules};
use crate::trainer::{
    auto_config, dpo_train, sft_train, DatasetStats, DpoOptions, ResourceBudget, TrainingConfig,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Module-disable switches mirroring the ablation study rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Raw data bypasses quality filtering: score 0, nothing excluded.
    #[serde(default)]
    pub disable_censor: bool,
    /// Filtered data is used directly without augmentation.
    #[serde(default)]
    pub disable_expansion: bool,
    /// No parameter path from feedback: rounds leave the model untouched.
    #[serde(default)]
    pub disable_evolution: bool,
    /// Skip the supervised stage.
    #[serde(default)]
    pub disable_sft: bool,
    /// Skip the preference-optimization stage.
    #[serde(default)]
    pub disable_po: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub struct Seeds {
    pub master: u64,
}


/// Training hyperparameters: derived from resources and dataset traits, or
/// pinned explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Auto(ResourceBudget),
    Explicit(TrainingConfig),
}

impl Default for TrainingMode {
    fn default() -> Self {
        TrainingMode::Auto(ResourceBudget::default())
    }
}

/// Dwell-seconds discretization cutoffs (log ingestion format).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellCutoffs {
    /// Up to this many seconds is short (level 0).
    pub short_max_s: f64,
    /// Up to this many seconds is medium (level 1); above is long (level 2).
    pub medium_max_s: f64,
}

impl Default for DwellCutoffs {
    fn default() -> Self {
        DwellCutoffs { short_max_s: 5.0, medium_max_s: 30.0 }
    }
}

impl DwellCutoffs {
    pub fn level(&self, seconds: f64) -> u8 {
        if seconds <= self.short_max_s {
            0
        } else if seconds <= self.medium_max_s {
            1
        } else {
            2
        }
    }
}

/// Knobs of the synthetic-user simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub response_len_min: usize,
    pub response_len_max: usize,
    /// Sampling temperature for model responses (exploration).
    pub temperature: f64,
    /// Interactions per simulated session.
    pub session_len: usize,
    /// Probability of a complaint comment on a style mismatch.
    pub complaint_probability: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            response_len_min: 4,
            response_len_max: 7,
            temperature: 1.0,
            session_len: 5,
            complaint_probability: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Greedy-decode length for probe responses.
    pub decode_len: usize,
    pub probes_per_topic: usize,
}

/// Knobs for external-process backends (wired from the environment by the
/// CLI): request timeout, per-sample retries on invalid labels, and the
/// number of sampled classifications behind the agreement confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalBackendConfig {
    pub timeout_ms: u64,
    pub retries: usize,
    pub samples: usize,
}

impl Default for ExternalBackendConfig {
    fn default() -> Self {
        ExternalBackendConfig { timeout_ms: 10_000, retries: 2, samples: 5 }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { decode_len: 7, probes_per_topic: 6 }
    }
}

/// Full configuration of one evolution run. Doubles as the on-disk config
/// file format (`DPSE_CONFIG`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    #[serde(default = "default_trigger_threshold")]
    pub trigger_threshold: usize,
    #[serde(default)]
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    #[serde(default)]
    pub training: TrainingMode,
    #[serde(default)]
    pub ablations: AblationFlags,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_topics")]
    pub topics: Vec<TopicSpec>,
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f64,
    #[serde(default)]
    pub dwell: DwellCutoffs,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub external: ExternalBackendConfig,
}

fn default_trigger_threshold() -> usize {
    50
}
fn default_min_confidence() -> f64 {
    0.2
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            trigger_threshold: default_trigger_threshold(),
            constraint: ConstraintConfig::default(),
            expansion: ExpansionConfig::default(),
            training: TrainingMode::default(),
            ablations: AblationFlags::default(),
            seeds: Seeds::default(),
            topics: default_topics(),
            min_confidence: default_min_confidence(),
            dwell: DwellCutoffs::default(),
            validation: ValidationConfig::default(),
            simulator: SimulatorConfig::default(),
            evaluation: EvalConfig::default(),
            external: ExternalBackendConfig::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: EvolutionConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.constraint.validate()?;
        cfg.expansion.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Synthetic user
// ---------------------------------------------------------------------------

/// Maps response match quality in [0, 1] to a dwell level. An engaged read
/// is medium dwell (the transform's peak); a confusing response earns a long
/// dwell; a miss earns a short one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellModel {
    pub engaged_min_quality: f64,
    pub confused_min_quality: f64,
}

impl Default for DwellModel {
    fn default() -> Self {
        DwellModel { engaged_min_quality: 0.75, confused_min_quality: 0.25 }
    }
}

impl DwellModel {
    pub fn level(&self, quality: f64) -> u8 {
        if quality >= self.engaged_min_quality {
            1
        } else if quality >= self.confused_min_quality {
            2
        } else {
            0
        }
    }
}

/// The simulated user: style preference, topic interests, and the
/// praise/dwell generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    /// Tokens a response must contain to count as style-matched.
    pub preferred_style: Vec<String>,
    /// Topic name -> share of queries.
    pub topic_mix: BTreeMap<String, f64>,
    pub praise_probability_given_match: f64,
    #[serde(default)]
    pub dwell_model: DwellModel,
}

impl Default for UserProfile {
    fn default() -> Self {
        UserProfile {
            preferred_style: vec!["brief".into()],
            topic_mix: [
                ("health".to_string(), 0.5),
                ("sports".to_string(), 0.3),
                ("technology".to_string(), 0.2),
            ]
            .into(),
            praise_probability_given_match: 0.95,
            dwell_model: DwellModel::default(),
        }
    }
}

impl UserProfile {
    pub fn validate(&self, topics: &[TopicSpec]) -> Result<()> {
        if self.topic_mix.is_empty() {
            return Err(Error::InvalidInput("empty topic mix".into()));
        }
        let sum: f64 = self.topic_mix.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("topic mix sums to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.praise_probability_given_match) {
            return Err(Error::InvalidInput("praise probability outside [0, 1]".into()));
        }
        for name in self.topic_mix.keys() {
            if !topics.iter().any(|t| t.name == *name) {
                return Err(Error::InvalidInput(format!("topic mix names unknown topic '{name}'")));
            }
        }
        Ok(())
    }
}

// The simulated user states the preferred style inside the query ({s}),
// the way real users phrase requests; the style hint never lands at the
// query end so greedy decodes still start from a topic keyword.
const QUERY_TEMPLATES: &[&str] = &[
    "in {s} tell me about {a} and {b}",
    "explain {a} {b} in {s} for me",
    "in {s} what about {a} and {b}",
];

const PRAISE_COMMENTS: &[&str] = &[
    "Thanks, very clear!",
    "Great, thanks!",
    "Perfect, very helpful!",
];

const COMPLAINT_COMMENTS: &[&str] = &[
    "This doesn't answer my question.",
    "Not helpful at all.",
    "This is confusing and wrong.",
];

/// Response style markers the simulator's world knows about; the profile
/// prefers a subset of these.
const STYLE_TOKENS: &[&str] = &["brief", "detail"];

const FILLER_TOKENS: &[&str] = &["indeed", "overall", "in", "short", "to", "be", "precise"];

fn fill_template(template: &str, a: &str, b: &str, style_hint: &str) -> String {
    template.replace("{a}", a).replace("{b}", b).replace("{s}", style_hint)
}

/// One evaluation probe: a query plus the style attributes its greedy
/// decode must contain to count as aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub query: String,
    pub style: Vec<String>,
}

/// Deterministic probe set: fixed keyword pairs and templates per topic in
/// the profile's mix.
pub fn generate_probes(profile: &UserProfile, topics: &[TopicSpec], eval: &EvalConfig) -> Vec<Probe> {
    let mut probes = Vec::new();
    for topic_name in profile.topic_mix.keys() {
        let Some(spec) = topics.iter().find(|t| t.name == *topic_name) else { continue };
        for j in 0..eval.probes_per_topic {
            let a = &spec.keywords[j % spec.keywords.len()];
            let b = &spec.keywords[(j + 1) % spec.keywords.len()];
            let template = QUERY_TEMPLATES[j % QUERY_TEMPLATES.len()];
            probes.push(Probe {
                query: fill_template(template, a, b, &profile.preferred_style.join(" ")),
                style: profile.preferred_style.clone(),
            });
        }
    }
    probes
}

/// The token universe the simulator's policy model starts from: query
/// template words, topic keywords, style markers, and paraphrase fillers.
pub fn simulator_lexicon(topics: &[TopicSpec]) -> String {
    let mut words: Vec<String> = Vec::new();
    for t in QUERY_TEMPLATES {
        words.extend(
            t.replace("{a}", "")
                .replace("{b}", "")
                .replace("{s}", "")
                .split_whitespace()
                .map(str::to_string),
        );
    }
    for spec in topics {
        words.extend(spec.keywords.iter().cloned());
    }
    words.extend(STYLE_TOKENS.iter().map(|s| s.to_string()));
    words.extend(FILLER_TOKENS.iter().map(|s| s.to_string()));
    words.join(" ")
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of probes whose greedy decode contains every style token.
    pub alignment_rate: f64,
    /// Mean Censor satisfaction of the probe responses.
    pub mean_satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub pool_size: usize,
    pub n_pairs: usize,
    pub n_sft_examples: usize,
    pub sft_loss_curve: Vec<f64>,
    pub dpo_loss_curve: Vec<f64>,
    pub eval_metrics: EvalMetrics,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: EvolutionConfig,
    pub profile: Option<UserProfile>,
    pub n_interactions: Option<usize>,
}

/// Events emitted by ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum IngestEvent {
    Stored {
        entry_id: u64,
        score: f64,
        topic: String,
        excluded: bool,
        trigger: bool,
    },
    /// The interaction failed scoring or classification and went to the
    /// dead-letter file; the loop keeps running.
    Quarantined { reason: String },
}

// ---------------------------------------------------------------------------
// Backends bundle
// ---------------------------------------------------------------------------

/// Everything pluggable the orchestrator needs.
pub struct Backends {
    pub embedder: TrigramHashEmbedder,
    pub sentiment: LexiconSentiment,
    pub praise: PraiseRules,
    pub classifier: TopicClassifier,
    pub generator: Box<dyn GeneratorBackend>,
}

impl Backends {
    /// Deterministic built-in backends over the configured topic set.
    pub fn builtin(topics: &[TopicSpec]) -> Result<Self> {
        Ok(Backends {
            embedder: TrigramHashEmbedder::default(),
            sentiment: LexiconSentiment,
            praise: PraiseRules::default(),
            classifier: TopicClassifier::Builtin(KeywordTopicBackend::new(topics.to_vec())?),
            generator: Box::new(RuleParaphraser::default()),
        })
    }
}

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

pub struct Orchestrator {
    cfg: EvolutionConfig,
    profile: Option<UserProfile>,
    run_dir: PathBuf,
    params: FusionParameters,
    backends: Backends,
    pool: MemoryPool,
    model: PolicyModel,
    probes: Vec<Probe>,
    round_index: usize,
    interactions_seen: u64,
    session_responses: Vec<String>,
    current_session: u64,
    dead_letters: usize,
}

impl Orchestrator {
    /// Create a run directory and an orchestrator over it.
    ///
    /// With a profile, the initial policy model is built from the
    /// simulator's lexicon; without one (log-driven evolution) the model is
    /// built lazily from the first snapshot unless one is supplied.
    pub fn new(
        run_dir: &Path,
        cfg: EvolutionConfig,
        profile: Option<UserProfile>,
        model: Option<PolicyModel>,
        params: FusionParameters,
        backends: Backends,
    ) -> Result<Self> {
        cfg.constraint.validate()?;
        cfg.expansion.validate()?;
        if let Some(p) = &profile {
            p.validate(&cfg.topics)?;
        }
        std::fs::create_dir_all(run_dir)?;
        std::fs::create_dir_all(run_dir.join("checkpoints"))?;
        std::fs::create_dir_all(run_dir.join("datasets"))?;
        std::fs::create_dir_all(run_dir.join("reports"))?;

        let pool = MemoryPool::create(&run_dir.join("memory.jsonl"), cfg.trigger_threshold)?;
        let model = match model {
            Some(m) => m,
            None => {
                let lexicon = simulator_lexicon(&cfg.topics);
                if profile.is_some() {
                    PolicyModel::from_corpus(std::iter::once(lexicon.as_str()))?
                } else {
                    // Empty until the first round supplies a corpus.
                    PolicyModel::from_corpus(std::iter::empty())?
                }
            }
        };

        let probes = match &profile {
            Some(p) => generate_probes(p, &cfg.topics, &cfg.evaluation),
            None => Vec::new(),
        };

        let orch = Orchestrator {
            cfg,
            profile,
            run_dir: run_dir.to_path_buf(),
            params,
            backends,
            pool,
            model,
            probes,
            round_index: 0,
            interactions_seen: 0,
            session_responses: Vec::new(),
            current_session: 0,
            dead_letters: 0,
        };
        orch.write_manifest(None)?;
        orch.write_probes()?;
        orch.save_model_atomic(&orch.model, "active.json")?;
        Ok(orch)
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn pool(&self) -> &MemoryPool {
        &self.pool
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn set_probes(&mut self, probes: Vec<Probe>) -> Result<()> {
        self.probes = probes;
        self.write_probes()
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    fn write_manifest(&self, n_interactions: Option<usize>) -> Result<()> {
        let manifest = RunManifest {
            version: 1,
            config: self.cfg.clone(),
            profile: self.profile.clone(),
            n_interactions,
        };
        std::fs::write(
            self.run_dir.join("run_manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    fn write_probes(&self) -> Result<()> {
        let mut out = String::new();
        for p in &self.probes {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        std::fs::write(self.run_dir.join("probes.jsonl"), out)?;
        Ok(())
    }

    fn save_model_atomic(&self, model: &PolicyModel, name: &str) -> Result<()> {
        let dir = self.run_dir.join("checkpoints");
        let tmp = dir.join(format!(".{name}.tmp"));
        model.save(&tmp)?;
        std::fs::rename(&tmp, dir.join(name))?;
        Ok(())
    }

    /// Record a quarantined payload in the dead-letter file.
    pub fn dead_letter(&mut self, reason: &str, payload: &str) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.run_dir.join("dead_letter.jsonl"))?;
        let record = serde_json::json!({ "reason": reason, "payload": payload });
        writeln!(f, "{record}")?;
        self.dead_letters += 1;
        Ok(())
    }

    pub fn dead_letter_count(&self) -> usize {
        self.dead_letters
    }

    /// Score, classify, and store one interaction. Scoring or
    /// classification failures quarantine the interaction instead of
    /// crashing the loop.
    pub fn ingest(&mut self, interaction: &Interaction) -> Result<IngestEvent> {
        let scored: Result<(f64, f64)> = (|| {
            if self.cfg.ablations.disable_censor {
                return Ok((0.0, 1.0));
            }
            let signal_backends = SignalBackends {
                embedder: &self.backends.embedder,
                sentiment: &self.backends.sentiment,
                praise: &self.backends.praise,
            };
            let state =
                satisfaction_score(interaction, &self.params, &self.cfg.constraint, &signal_backends)?;
            Ok((state.final_score, f64::NAN))
        })();

        let (score, forced_confidence) = match scored {
            Ok(v) => v,
            Err(e) => {
                let payload = serde_json::to_string(interaction)?;
                self.dead_letter(&e.to_string(), &payload)?;
                return Ok(IngestEvent::Quarantined { reason: e.to_string() });
            }
        };

        let classified = classify_topic(&interaction.query, &interaction.response, &self.backends.classifier);
        let (topic, confidence) = match classified {
            Ok(v) => v,
            Err(e) => {
                let payload = serde_json::to_string(interaction)?;
                self.dead_letter(&e.to_string(), &payload)?;
                return Ok(IngestEvent::Quarantined { reason: e.to_string() });
            }
        };
        let confidence = if forced_confidence.is_nan() { confidence } else { forced_confidence };
        let min_confidence = if self.cfg.ablations.disable_censor { 0.0 } else { self.cfg.min_confidence };

        let outcome = self.pool.store(
            interaction.query.clone(),
            interaction.response.clone(),
            score,
            &topic,
            confidence,
            min_confidence,
        )?;
        Ok(IngestEvent::Stored {
            entry_id: outcome.entry_id,
            score,
            topic: topic.as_str().to_string(),
            excluded: outcome.excluded,
            trigger: outcome.trigger,
        })
    }

    fn training_config(&self, n_examples: usize, stage_seed: u64) -> TrainingConfig {
        let mut cfg = match &self.cfg.training {
            TrainingMode::Auto(budget) => auto_config(
                budget,
                &DatasetStats {
                    n_examples,
                    vocab_size: self.model.vocab_size(),
                    token_frequencies: None,
                },
            ),
            TrainingMode::Explicit(c) => c.clone(),
        };
        cfg.seed = stage_seed;
        cfg
    }

    /// Evaluate a model against the probe set: greedy-decode each probe and
    /// measure style alignment plus mean Censor satisfaction.
    pub fn evaluate_model(&self, model: &PolicyModel) -> Result<EvalMetrics> {
        evaluate(
            model,
            &self.probes,
            &CensorScorer {
                params: &self.params,
                constraint: &self.cfg.constraint,
                embedder: &self.backends.embedder,
                sentiment: &self.backends.sentiment,
            },
            &self.cfg.evaluation,
        )
    }

    pub fn evaluate_current(&self) -> Result<EvalMetrics> {
        self.evaluate_model(&self.model)
    }

    /// Run one evolution round off the pending snapshot. On any stage
    /// failure the round aborts and the previous model stays active.
    pub fn run_evolution_round(&mut self) -> Result<RoundReport> {
        let started = Instant::now();
        let batch = self.pool.snapshot();
        if batch.is_empty() {
            return Err(Error::InvalidInput("evolution round requires a non-empty snapshot".into()));
        }
        self.round_index += 1;
        let round = self.round_index;
        let master = self.cfg.seeds.master;

        // Log-driven runs build their vocabulary from the first batch.
        if self.model.vocab_size() <= 1 {
            let mut corpus: Vec<String> = Vec::new();
            for e in &batch {
                corpus.push(e.query.clone());
                corpus.push(e.response.clone());
            }
            for p in &self.probes {
                corpus.push(p.query.clone());
                corpus.push(p.style.join(" "));
            }
            self.model = PolicyModel::from_corpus(corpus.iter().map(|s| s.as_str()))?;
            self.save_model_atomic(&self.model, "active.json")?;
        }

        let mut expansion_cfg = self.cfg.expansion.clone();
        expansion_cfg.generator_seed = derive_seed(master, "generator", &[round as u64]);

        let scorer = CensorScorer {
            params: &self.params,
            constraint: &self.cfg.constraint,
            embedder: &self.backends.embedder,
            sentiment: &self.backends.sentiment,
        };
        let ctx = ExpansionContext {
            generator: self.backends.generator.as_ref(),
            scorer: &scorer,
            classifier: &self.backends.classifier,
            embedder: &self.backends.embedder,
            validation: &self.cfg.validation,
        };

        let ablations = self.cfg.ablations;
        let mut new_model = self.model.clone();
        let mut sft_loss_curve = Vec::new();
        let mut dpo_loss_curve = Vec::new();
        let mut sft_data: Vec<SftExample> = Vec::new();
        let mut pairs: Vec<PreferencePair> = Vec::new();

        if !ablations.disable_evolution {
            sft_data = if ablations.disable_expansion {
                batch
                    .iter()
                    .map(|e| SftExample {
                        instruction: e.query.clone(),
                        output: e.response.clone(),
                        topic: e.topic.clone(),
                        provenance: crate::expansion::Provenance::Original,
                    })
                    .collect()
            } else {
                expand_by_topic(&batch, &expansion_cfg, &ctx)?
            };

            if !ablations.disable_sft {
                let tcfg = self.training_config(sft_data.len(), derive_seed(master, "sft", &[round as u64]));
                let out = sft_train(&new_model, &sft_data, &tcfg)?;
                new_model = out.model;
                sft_loss_curve = out.loss_curve;
            }

            if !ablations.disable_expansion {
                pairs = expand_by_preference(&batch, &expansion_cfg, &ctx)?;
            } else {
                log::info!("expansion disabled; no preference pairs, PO stage idles");
            }

            if !ablations.disable_po && !pairs.is_empty() {
                let tcfg = self.training_config(pairs.len(), derive_seed(master, "dpo", &[round as u64]));
                let opts = DpoOptions {
                    allow_unstaged: ablations.disable_sft,
                    ..Default::default()
                };
                let out = dpo_train(&new_model, &pairs, &tcfg, &opts)?;
                new_model = out.model;
                dpo_loss_curve = out.loss_curve;
            }
        }

        let eval_metrics = self.evaluate_model(&new_model)?;

        // Commit: datasets, checkpoints, report. The active model swaps
        // atomically only now that every stage has succeeded.
        crate::expansion::write_sft_jsonl(
            &self.run_dir.join(format!("datasets/round_{round}_sft.jsonl")),
            &sft_data,
        )?;
        crate::expansion::write_pairs_jsonl(
            &self.run_dir.join(format!("datasets/round_{round}_pairs.jsonl")),
            &pairs,
        )?;
        self.save_model_atomic(&new_model, &format!("model_round_{round}.json"))?;
        self.save_model_atomic(&new_model, "active.json")?;
        self.model = new_model;

        let report = RoundReport {
            round_index: round,
            pool_size: self.pool.len(),
            n_pairs: pairs.len(),
            n_sft_examples: sft_data.len(),
            sft_loss_curve,
            dpo_loss_curve,
            eval_metrics,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        std::fs::write(
            self.run_dir.join(format!("reports/round_{round}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        Ok(report)
    }

    /// Synthesize the next simulated interaction: a topic-conditioned query,
    /// a sampled model response, and profile-driven feedback signals.
    pub fn synthesize_interaction(&mut self) -> Result<Interaction> {
        let profile = self
            .profile
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("simulation requires a user profile".into()))?;
        let i = self.interactions_seen;
        self.interactions_seen += 1;
        let mut rng = Rng::new(derive_seed(self.cfg.seeds.master, "interaction", &[i]));

        // Query from the topic mix.
        let names: Vec<&String> = profile.topic_mix.keys().collect();
        let shares: Vec<f64> = profile.topic_mix.values().copied().collect();
        let topic_name = names[rng.weighted_index(&shares)];
        let spec = self
            .cfg
            .topics
            .iter()
            .find(|t| t.name == *topic_name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown topic '{topic_name}'")))?;
        let a = &spec.keywords[rng.below(spec.keywords.len())];
        let mut b = &spec.keywords[rng.below(spec.keywords.len())];
        if b == a {
            b = &spec.keywords[(spec.keywords.iter().position(|k| k == a).unwrap() + 1) % spec.keywords.len()];
        }
        let template = QUERY_TEMPLATES[rng.below(QUERY_TEMPLATES.len())];
        let query = fill_template(template, a, b, &profile.preferred_style.join(" "));

        // Model response by temperature sampling (exploration).
        let sim = self.cfg.simulator;
        let len = sim.response_len_min + rng.below(sim.response_len_max - sim.response_len_min + 1);
        let response_tokens = self.model.sample_decode(&query, len, sim.temperature, &mut rng);
        let response = response_tokens.join(" ");

        // Profile reaction.
        let style_match = profile
            .preferred_style
            .iter()
            .all(|s| response_tokens.iter().any(|t| t == s));
        let topic_overlap = spec.keywords.iter().any(|k| response_tokens.iter().any(|t| t == k));
        let quality = 0.5 * f64::from(style_match as u8) + 0.5 * f64::from(topic_overlap as u8);
        let user_comment = if style_match && rng.chance(profile.praise_probability_given_match) {
            Some(PRAISE_COMMENTS[rng.below(PRAISE_COMMENTS.len())].to_string())
        } else if !style_match && rng.chance(sim.complaint_probability) {
            Some(COMPLAINT_COMMENTS[rng.below(COMPLAINT_COMMENTS.len())].to_string())
        } else {
            None
        };
        let dwell_level = profile.dwell_model.level(quality);

        // Session bookkeeping for the redundancy signal.
        let session = i / sim.session_len as u64;
        if session != self.current_session {
            self.current_session = session;
            self.session_responses.clear();
        }
        let prior_responses = self.session_responses.clone();
        self.session_responses.push(response.clone());

        Ok(Interaction {
            session_id: format!("sim-{session}"),
            query,
            response,
            user_comment,
            dwell_level,
            prior_responses,
            timestamp_ms: i as i64 * 1000,
        })
    }

    /// Write the plot-ready CSV: one row per round plus the round-0
    /// baseline.
    pub fn write_rounds_csv(&self, baseline: &EvalMetrics, reports: &[RoundReport]) -> Result<()> {
        let mut csv = String::from("round,alignment_rate,mean_satisfaction,sft_loss,dpo_loss\n");
        csv.push_str(&format!(
            "0,{},{},,\n",
            baseline.alignment_rate, baseline.mean_satisfaction
        ));
        for r in reports {
            let sft = r.sft_loss_curve.last().map(|v| v.to_string()).unwrap_or_default();
            let dpo = r.dpo_loss_curve.last().map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.round_index, r.eval_metrics.alignment_rate, r.eval_metrics.mean_satisfaction, sft, dpo
            ));
        }
        std::fs::write(self.run_dir.join("rounds.csv"), csv)?;
        Ok(())
    }

    /// Drive the full loop with the synthetic user for `n_interactions`
    /// steps, running a round whenever the trigger fires. Returns one report
    /// per completed round.
    pub fn simulate(
        run_dir: &Path,
        cfg: EvolutionConfig,
        profile: UserProfile,
        n_interactions: usize,
    ) -> Result<Vec<RoundReport>> {
        if n_interactions < cfg.trigger_threshold {
            return Err(Error::InvalidInput(format!(
                "n_interactions {n_interactions} below the trigger threshold {}",
                cfg.trigger_threshold
            )));
        }
        let backends = Backends::builtin(&cfg.topics)?;
        let params = FusionParameters::reference();
        let mut orch = Orchestrator::new(run_dir, cfg, Some(profile), None, params, backends)?;
        orch.write_manifest(Some(n_interactions))?;

        let baseline = orch.evaluate_current()?;
        let mut reports = Vec::new();
        for _ in 0..n_interactions {
            let interaction = orch.synthesize_interaction()?;
            let event = orch.ingest(&interaction)?;
            if let IngestEvent::Stored { trigger: true, .. } = event {
                reports.push(orch.run_evolution_round()?);
            }
        }
        orch.write_rounds_csv(&baseline, &reports)?;
        Ok(reports)
    }

    /// Like [`Orchestrator::simulate`], but runs until `rounds` evolution
    /// rounds have completed (confidence-filtered ingests make the exact
    /// interaction count data-dependent). Gives up after
    /// `8 * rounds * trigger_threshold` interactions.
    pub fn simulate_rounds(
        run_dir: &Path,
        cfg: EvolutionConfig,
        profile: UserProfile,
        rounds: usize,
    ) -> Result<Vec<RoundReport>> {
        let backends = Backends::builtin(&cfg.topics)?;
        let params = FusionParameters::reference();
        let max_interactions = 8 * rounds.max(1) * cfg.trigger_threshold;
        let mut orch = Orchestrator::new(run_dir, cfg, Some(profile), None, params, backends)?;
        orch.write_manifest(None)?;

        let baseline = orch.evaluate_current()?;
        let mut reports = Vec::new();
        let mut fed = 0usize;
        while reports.len() < rounds && fed < max_interactions {
            let interaction = orch.synthesize_interaction()?;
            fed += 1;
            let event = orch.ingest(&interaction)?;
            if let IngestEvent::Stored { trigger: true, .. } = event {
                reports.push(orch.run_evolution_round()?);
            }
        }
        if reports.len() < rounds {
            log::warn!(
                "simulation stopped after {fed} interactions with {} of {rounds} rounds",
                reports.len()
            );
        }
        orch.write_rounds_csv(&baseline, &reports)?;
        Ok(reports)
    }
}

/// Alignment rate and mean satisfaction of a model over a probe set.
pub fn evaluate(
    model: &PolicyModel,
    probes: &[Probe],
    scorer: &dyn ResponseScorer,
    eval: &EvalConfig,
) -> Result<EvalMetrics> {
    if probes.is_empty() {
        return Err(Error::InvalidInput("empty probe set".into()));
    }
    let mut aligned = 0usize;
    let mut satisfaction = 0.0;
    for probe in probes {
        let tokens = model.greedy_decode(&probe.query, eval.decode_len);
        if probe.style.iter().all(|s| tokens.iter().any(|t| t == s)) {
            aligned += 1;
        }
        satisfaction += scorer.score(&probe.query, &tokens.join(" "))?;
    }
    Ok(EvalMetrics {
        alignment_rate: aligned as f64 / probes.len() as f64,
        mean_satisfaction: satisfaction / probes.len() as f64,
    })
}

/// Read probes from a JSON Lines file ({"query": ..., "style": [...]}).
pub fn read_probes_jsonl(path: &Path) -> Result<Vec<Probe>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("probe line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Stage;

    fn tiny_cfg(n: usize, master: u64) -> EvolutionConfig {
        EvolutionConfig {
            trigger_threshold: n,
            seeds: Seeds { master },
            ..Default::default()
        }
    }

    fn orchestrator(dir: &Path, cfg: EvolutionConfig) -> Orchestrator {
        let backends = Backends::builtin(&cfg.topics).unwrap();
        Orchestrator::new(
            dir,
            cfg,
            Some(UserProfile::default()),
            None,
            FusionParameters::reference(),
            backends,
        )
        .unwrap()
    }

    fn interaction(i: u64, comment: Option<&str>) -> Interaction {
        Interaction {
            session_id: format!("s{}", i / 5),
            query: "tell me about doctor and symptom".into(),
            response: "the treatment is rest and medication".into(),
            user_comment: comment.map(str::to_string),
            dwell_level: 1,
            prior_responses: vec![],
            timestamp_ms: i as i64,
        }
    }

    #[test]
    fn second_ingest_fires_trigger_at_threshold_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = orchestrator(dir.path(), tiny_cfg(2, 7));
        let e1 = orch.ingest(&interaction(0, Some("Thanks, very clear!"))).unwrap();
        match e1 {
            IngestEvent::Stored { trigger, .. } => assert!(!trigger),
            _ => panic!("expected stored event"),
        }
        let e2 = orch.ingest(&interaction(1, None)).unwrap();
        match e2 {
            IngestEvent::Stored { trigger, .. } => assert!(trigger),
            _ => panic!("expected stored event"),
        }
    }

    #[test]
    fn disable_censor_stores_zero_score_without_exclusion() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvolutionConfig {
            ablations: AblationFlags { disable_censor: true, ..Default::default() },
            ..tiny_cfg(5, 1)
        };
        let mut orch = orchestrator(dir.path(), cfg);
        // A query with no topic keywords classifies at uniform confidence,
        // which the filter would normally exclude.
        let ix = Interaction {
            query: "hello there friend".into(),
            response: "nothing topical at all".into(),
            ..interaction(0, None)
        };
        match orch.ingest(&ix).unwrap() {
            IngestEvent::Stored { score, excluded, .. } => {
                assert_eq!(score, 0.0);
                assert!(!excluded);
            }
            _ => panic!("expected stored event"),
        }
    }

    #[test]
    fn scoring_failure_goes_to_dead_letter() {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = orchestrator(dir.path(), tiny_cfg(5, 1));
        // Empty response makes coherence extraction fail.
        let bad = Interaction { response: String::new(), ..interaction(0, None) };
        match orch.ingest(&bad).unwrap() {
            IngestEvent::Quarantined { .. } => {}
            _ => panic!("expected quarantine"),
        }
        assert_eq!(orch.dead_letter_count(), 1);
        assert_eq!(orch.pool().len(), 0);
        assert!(dir.path().join("dead_letter.jsonl").exists());
    }

    #[test]
    fn round_without_snapshot_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = orchestrator(dir.path(), tiny_cfg(5, 1));
        assert!(orch.run_evolution_round().is_err());
    }

    #[test]
    fn failed_round_keeps_previous_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvolutionConfig {
            // A non-finite learning rate fails stage validation mid-round.
            training: TrainingMode::Explicit(TrainingConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            }),
            ..tiny_cfg(2, 3)
        };
        let mut orch = orchestrator(dir.path(), cfg);
        let active = dir.path().join("checkpoints/active.json");
        let before = std::fs::read(&active).unwrap();
        orch.ingest(&interaction(0, None)).unwrap();
        orch.ingest(&interaction(1, None)).unwrap();
        assert!(orch.run_evolution_round().is_err());
        let after = std::fs::read(&active).unwrap();
        assert_eq!(before, after, "active checkpoint must be untouched by a failed round");
    }

    #[test]
    fn full_round_produces_artifacts_and_version_bump() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(6, 11);
        let mut orch = orchestrator(dir.path(), cfg);
        let before_version = orch.model().version;
        let mut fired = false;
        // Some ingests fall to the confidence filter, so more than 6 may be
        // needed before 6 included entries accumulate.
        for _ in 0..60 {
            let ix = orch.synthesize_interaction().unwrap();
            if let IngestEvent::Stored { trigger: true, .. } = orch.ingest(&ix).unwrap() {
                fired = true;
                let report = orch.run_evolution_round().unwrap();
                assert_eq!(report.round_index, 1);
                assert!(report.n_sft_examples > 0);
                assert!(report.eval_metrics.alignment_rate.is_finite());
                break;
            }
        }
        assert!(fired, "threshold 6 must fire within 60 ingests");
        assert!(dir.path().join("datasets/round_1_sft.jsonl").exists());
        assert!(dir.path().join("datasets/round_1_pairs.jsonl").exists());
        assert!(dir.path().join("reports/round_1.json").exists());
        assert!(dir.path().join("checkpoints/model_round_1.json").exists());
        // SFT and DPO both ran: version +2.
        assert_eq!(orch.model().version, before_version + 2);
        assert_eq!(orch.model().stage, Stage::Dpo);
    }

    #[test]
    fn disable_po_increments_version_once() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvolutionConfig {
            ablations: AblationFlags { disable_po: true, ..Default::default() },
            ..tiny_cfg(4, 5)
        };
        let mut orch = orchestrator(dir.path(), cfg);
        let before = orch.model().version;
        loop {
            let ix = orch.synthesize_interaction().unwrap();
            if let IngestEvent::Stored { trigger: true, .. } = orch.ingest(&ix).unwrap() {
                break;
            }
        }
        let report = orch.run_evolution_round().unwrap();
        assert_eq!(orch.model().version, before + 1);
        assert!(!report.sft_loss_curve.is_empty());
        assert!(report.dpo_loss_curve.is_empty());
    }

    #[test]
    fn disable_evolution_leaves_model_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvolutionConfig {
            ablations: AblationFlags { disable_evolution: true, ..Default::default() },
            ..tiny_cfg(4, 5)
        };
        let mut orch = orchestrator(dir.path(), cfg);
        let theta_before = orch.model().theta.clone();
        loop {
            let ix = orch.synthesize_interaction().unwrap();
            if let IngestEvent::Stored { trigger: true, .. } = orch.ingest(&ix).unwrap() {
                break;
            }
        }
        let report = orch.run_evolution_round().unwrap();
        assert_eq!(orch.model().theta, theta_before);
        assert_eq!(report.n_pairs, 0);
        assert_eq!(report.n_sft_examples, 0);
    }

    #[test]
    fn simulate_requires_enough_interactions() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(50, 1);
        let err = Orchestrator::simulate(dir.path(), cfg, UserProfile::default(), 10);
        assert!(err.is_err());
    }

    #[test]
    fn simulate_emits_one_report_per_round() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(10, 21);
        let reports = Orchestrator::simulate(dir.path(), cfg, UserProfile::default(), 30).unwrap();
        // Some ingests are excluded by the confidence filter, so at most 3
        // rounds fire; at least one must.
        assert!(!reports.is_empty());
        for (i, r) in reports.iter().enumerate() {
            assert_eq!(r.round_index, i + 1);
        }
        assert!(dir.path().join("rounds.csv").exists());
        let csv = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert!(csv.starts_with("round,alignment_rate,mean_satisfaction,sft_loss,dpo_loss"));
        assert_eq!(csv.lines().count(), reports.len() + 2); // header + round 0
    }

    #[test]
    fn evaluate_counts_style_alignment() {
        let model = PolicyModel::from_corpus(["brief answer tokens here"]).unwrap();
        struct Zero;
        impl ResponseScorer for Zero {
            fn score(&self, _: &str, _: &str) -> Result<f64> {
                Ok(0.25)
            }
        }
        let probes = vec![
            Probe { query: "anything".into(), style: vec!["brief".into()] },
            Probe { query: "anything".into(), style: vec!["missing-token".into()] },
        ];
        // Zero-initialized model decodes <unk> forever: alignment 0.
        let metrics = evaluate(&model, &probes, &Zero, &EvalConfig::default()).unwrap();
        assert_eq!(metrics.alignment_rate, 0.0);
        assert_eq!(metrics.mean_satisfaction, 0.25);

        // A model whose greedy chain passes through "brief" aligns probe 1.
        let mut biased = model.clone();
        let v = biased.vocab_size();
        let brief = biased.token_id("brief");
        for ctx in 0..=v {
            biased.theta[ctx * v + brief] = 5.0;
        }
        let metrics = evaluate(&biased, &probes, &Zero, &EvalConfig::default()).unwrap();
        assert_eq!(metrics.alignment_rate, 0.5);
    }

    #[test]
    fn dwell_model_levels() {
        let m = DwellModel::default();
        assert_eq!(m.level(1.0), 1);
        assert_eq!(m.level(0.5), 2);
        assert_eq!(m.level(0.0), 0);
    }

    #[test]
    fn dwell_cutoffs_map_seconds() {
        let d = DwellCutoffs::default();
        assert_eq!(d.level(2.0), 0);
        assert_eq!(d.level(10.0), 1);
        assert_eq!(d.level(60.0), 2);
    }

    #[test]
    fn synthesized_interactions_are_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut a = orchestrator(dir_a.path(), tiny_cfg(50, 99));
        let mut b = orchestrator(dir_b.path(), tiny_cfg(50, 99));
        for _ in 0..20 {
            assert_eq!(a.synthesize_interaction().unwrap(), b.synthesize_interaction().unwrap());
        }
    }
}
