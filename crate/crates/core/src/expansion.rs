//! Dual dataset expansion from a memory snapshot.
//!
//! Two datasets come out of every snapshot batch:
//!
//! * a preference dataset: entries are duplicated in proportion to their
//!   satisfaction score (floor(K * s') copies with s' the score mapped to
//!   [0, 1]), response variants are generated and Censor-scored, and
//!   above-median vs below-median variants form weighted preference pairs;
//! * a topic-balanced SFT dataset: underrepresented topics are topped up
//!   with validated variants of their highest-scoring entries until the
//!   topic histogram approaches the target distribution.
//!
//! All generation is seeded per entry, so parallel and serial runs emit
//! byte-identical datasets.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::embed::EmbeddingBackend;
use crate::backends::generate::GeneratorBackend;
use crate::backends::sentiment::SentimentBackend;
use crate::constraint::{self, ConstraintConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionParameters;
use crate::memory::{classify_topic, MemoryEntry, TopicClassifier};
use crate::seed::derive_seed;
use crate::signal::{self, SignalVector};

/// Verbatim instruction for preference-aware variant generation.
pub const PREFERENCE_PROMPT: &str =
    "Given a user–assistant interaction, generate N responses that maintain the original intent and fluency while aligning with user satisfaction.";

/// Verbatim instruction for topic-preserving variant generation.
pub const TOPIC_EXPANSION_PROMPT: &str =
    "Given a conversation and its topic label, generate alternative responses that remain within the topic but vary in reasoning path or linguistic style.";

/// Target topic distribution for the SFT dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum TargetDistribution {
    /// Uniform over the topics present in the batch.
    #[default]
    Uniform,
    /// Explicit per-topic shares; must sum to 1.
    Explicit(BTreeMap<String, f64>),
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Frequency scale K: expansion frequency is floor(K * s').
    #[serde(default = "default_k")]
    pub k: f64,
    /// Variants requested per generator call.
    #[serde(default = "default_variants")]
    pub variants_per_sample: usize,
    #[serde(default)]
    pub target_distribution: TargetDistribution,
    /// Hard cap on generated examples per topic and round.
    #[serde(default = "default_cap")]
    pub max_generated_per_topic: usize,
    #[serde(default)]
    pub generator_seed: u64,
}

fn default_k() -> f64 {
    10.0
}
fn default_variants() -> usize {
    4
}
fn default_cap() -> usize {
    16
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            k: default_k(),
            variants_per_sample: default_variants(),
            target_distribution: TargetDistribution::default(),
            max_generated_per_topic: default_cap(),
            generator_seed: 0,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k <= 0.0 {
            return Err(Error::InvalidInput("K must be positive".into()));
        }
        if self.variants_per_sample == 0 {
            return Err(Error::InvalidInput("variants_per_sample must be positive".into()));
        }
        if let TargetDistribution::Explicit(shares) = &self.target_distribution {
            let sum: f64 = shares.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("explicit shares sum to {sum}, not 1")));
            }
            if shares.values().any(|s| *s < 0.0) {
                return Err(Error::InvalidInput("negative topic share".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Generated,
}

/// One supervised fine-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub instruction: String,
    pub output: String,
    pub topic: String,
    pub provenance: Provenance,
}

/// One weighted preference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub weight: f64,
}

/// Expansion frequency: map the score from [-1, 1] to s' in [0, 1] and
/// floor K * s'. Scores below the first step are suppressed entirely.
pub fn expansion_frequency(score: f64, k: f64) -> u64 {
    debug_assert!(k > 0.0);
    let s_prime = ((score + 1.0) / 2.0).clamp(0.0, 1.0);
    (k * s_prime).floor() as u64
}

/// Score-proportional duplication: entry i appears exactly
/// `expansion_frequency(score_i, k)` times, in batch order. Excluded
/// entries contribute nothing.
pub fn duplicate_by_frequency(batch: &[MemoryEntry], k: f64) -> Vec<&MemoryEntry> {
    let mut pool = Vec::new();
    for entry in batch.iter().filter(|e| !e.excluded) {
        for _ in 0..expansion_frequency(entry.score, k) {
            pool.push(entry);
        }
    }
    pool
}

/// Scores a candidate response against its prompt. The production
/// implementation is [`CensorScorer`]; tests may substitute stubs.
pub trait ResponseScorer {
    fn score(&self, query: &str, response: &str) -> Result<f64>;
}

/// Censor-backed response scorer for generated variants. Behavioral signals
/// are neutral constants (no feedback, medium dwell, no priors), so the
/// ranking is driven by coherence and sentiment.
pub struct CensorScorer<'a> {
    pub params: &'a FusionParameters,
    pub constraint: &'a ConstraintConfig,
    pub embedder: &'a dyn EmbeddingBackend,
    pub sentiment: &'a dyn SentimentBackend,
}

impl ResponseScorer for CensorScorer<'_> {
    fn score(&self, query: &str, response: &str) -> Result<f64> {
        let vector = SignalVector {
            fb: 0,
            dwell: 1,
            coherence: signal::coherence(query, response, self.embedder)?,
            similarity: 0.0,
            sentiment: signal::sentiment(response, self.sentiment)?,
        };
        Ok(constraint::score_signals(&vector, self.params, self.constraint)?.final_score)
    }
}

/// Validation constraints for generated candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Maximum candidate length in characters.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Minimum coherence between the candidate and its prompt.
    #[serde(default = "default_min_coherence")]
    pub min_coherence: f64,
}

fn default_max_len() -> usize {
    1000
}
fn default_min_coherence() -> f64 {
    0.05
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { max_len: default_max_len(), min_coherence: default_min_coherence() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooLong,
    Duplicate,
    TopicDrift,
    LowCoherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Accept,
    Reject(RejectReason),
}

/// Shared context for both expansion strategies.
pub struct ExpansionContext<'a> {
    pub generator: &'a dyn GeneratorBackend,
    pub scorer: &'a dyn ResponseScorer,
    pub classifier: &'a TopicClassifier,
    pub embedder: &'a dyn EmbeddingBackend,
    pub validation: &'a ValidationConfig,
}

/// Validate one generated candidate against its seed entry.
///
/// Rejects candidates that are empty or over the length cap, byte-identical
/// to their seed response, classified into a different topic than the seed,
/// or insufficiently coherent with the seed query.
pub fn validate_generated(
    candidate: &str,
    seed: &MemoryEntry,
    ctx: &ExpansionContext<'_>,
) -> Result<Validation> {
    if candidate.trim().is_empty() {
        return Ok(Validation::Reject(RejectReason::Empty));
    }
    if candidate.len() > ctx.validation.max_len {
        return Ok(Validation::Reject(RejectReason::TooLong));
    }
    if candidate == seed.response {
        return Ok(Validation::Reject(RejectReason::Duplicate));
    }
    let (label, _) = classify_topic(&seed.query, candidate, ctx.classifier)?;
    if label.as_str() != seed.topic {
        return Ok(Validation::Reject(RejectReason::TopicDrift));
    }
    let coherence = signal::coherence(&seed.query, candidate, ctx.embedder)?;
    if coherence < ctx.validation.min_coherence {
        return Ok(Validation::Reject(RejectReason::LowCoherence));
    }
    Ok(Validation::Accept)
}

/// Preference-driven expansion.
///
/// For each included entry with frequency f >= 1: generate variants with the
/// preference prompt, validate them, Censor-score original and variants,
/// split the candidates at the median score, and emit every
/// (above-median, below-median) pair with weight f. Entries whose generator
/// call fails are skipped with a diagnostic.
pub fn expand_by_preference(
    batch: &[MemoryEntry],
    cfg: &ExpansionConfig,
    ctx: &ExpansionContext<'_>,
) -> Result<Vec<PreferencePair>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty expansion batch".into()));
    }
    cfg.validate()?;

    // The duplicated candidate pool realizes the expansion frequencies; the
    // multiplicity of each entry becomes its pair weight.
    let pool = duplicate_by_frequency(batch, cfg.k);
    let mut multiplicity: BTreeMap<u64, u64> = BTreeMap::new();
    for entry in &pool {
        *multiplicity.entry(entry.entry_id).or_insert(0) += 1;
    }

    let mut pairs = Vec::new();
    for entry in batch.iter().filter(|e| !e.excluded) {
        let Some(&freq) = multiplicity.get(&entry.entry_id) else { continue };
        let seed = derive_seed(cfg.generator_seed, "preference", &[entry.entry_id]);
        let variants = match ctx.generator.generate(
            PREFERENCE_PROMPT,
            &entry.response,
            cfg.variants_per_sample,
            seed,
        ) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("generator failed for entry {}: {e}; skipped", entry.entry_id);
                continue;
            }
        };

        let mut candidates: Vec<String> = vec![entry.response.clone()];
        for v in variants {
            if matches!(validate_generated(&v, entry, ctx)?, Validation::Accept) {
                candidates.push(v);
            }
        }

        let mut scored: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
        for text in candidates {
            let s = ctx.scorer.score(&entry.query, &text)?;
            scored.push((text, s));
        }

        let mut order: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if order.len() % 2 == 1 {
            order[order.len() / 2]
        } else {
            0.5 * (order[order.len() / 2 - 1] + order[order.len() / 2])
        };

        let above: Vec<&(String, f64)> = scored.iter().filter(|(_, s)| *s > median).collect();
        let below: Vec<&(String, f64)> = scored.iter().filter(|(_, s)| *s < median).collect();
        for (chosen, _) in &above {
            for (rejected, _) in &below {
                if chosen != rejected {
                    pairs.push(PreferencePair {
                        prompt: entry.query.clone(),
                        chosen: chosen.clone(),
                        rejected: rejected.clone(),
                        weight: freq as f64,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Normalized topic histogram of a batch (excluded entries ignored).
pub fn topic_distribution(batch: &[MemoryEntry]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in batch.iter().filter(|e| !e.excluded) {
        *counts.entry(e.topic.clone()).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / total.max(1) as f64))
        .collect()
}

fn l1_distance(counts: &BTreeMap<String, usize>, target: &BTreeMap<String, f64>) -> f64 {
    let total: usize = counts.values().sum();
    if total == 0 {
        return target.values().sum();
    }
    let mut dist = 0.0;
    for (topic, share) in target {
        let have = *counts.get(topic).unwrap_or(&0) as f64 / total as f64;
        dist += (have - share).abs();
    }
    // Mass on topics outside the target support.
    for (topic, count) in counts {
        if !target.contains_key(topic) {
            dist += *count as f64 / total as f64;
        }
    }
    dist
}

/// Category-ratio-aware expansion toward the target topic distribution.
///
/// The post-expansion size M is implied by the most-represented topic:
/// M = max_t count_t / share_t, so deficits are
/// max(0, floor(share_t * M) - count_t). Representative seeds are the top-3
/// entries by score per topic. Generation proceeds greedily, always topping
/// up the currently most-underrepresented topic, and every accepted example
/// is guarded to never increase the L1 distance to the target.
pub fn expand_by_topic(
    batch: &[MemoryEntry],
    cfg: &ExpansionConfig,
    ctx: &ExpansionContext<'_>,
) -> Result<Vec<SftExample>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty expansion batch".into()));
    }
    cfg.validate()?;

    let included: Vec<&MemoryEntry> = batch.iter().filter(|e| !e.excluded).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &included {
        *counts.entry(e.topic.clone()).or_insert(0) += 1;
    }

    let target: BTreeMap<String, f64> = match &cfg.target_distribution {
        TargetDistribution::Uniform => {
            let n = counts.len().max(1);
            counts.keys().map(|t| (t.clone(), 1.0 / n as f64)).collect()
        }
        TargetDistribution::Explicit(shares) => shares.clone(),
    };

    // Post-expansion size implied by the most-represented topic.
    let m = target
        .iter()
        .filter(|(_, share)| **share > 0.0)
        .map(|(topic, share)| *counts.get(topic).unwrap_or(&0) as f64 / share)
        .fold(0.0f64, f64::max);

    let mut deficits: BTreeMap<String, usize> = BTreeMap::new();
    for (topic, share) in &target {
        let want = (share * m + 1e-9).floor() as usize;
        let have = *counts.get(topic).unwrap_or(&0);
        let deficit = want.saturating_sub(have).min(cfg.max_generated_per_topic);
        if deficit > 0 {
            if included.iter().any(|e| e.topic == *topic) {
                deficits.insert(topic.clone(), deficit);
            } else {
                log::warn!("topic '{topic}' has a deficit but no seed samples; skipped");
            }
        }
    }

    // Top-3 seeds per topic by score (entry id breaks ties).
    let mut seeds: BTreeMap<String, Vec<&MemoryEntry>> = BTreeMap::new();
    for topic in deficits.keys() {
        let mut entries: Vec<&MemoryEntry> =
            included.iter().copied().filter(|e| e.topic == *topic).collect();
        entries.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).unwrap().then(a.entry_id.cmp(&b.entry_id))
        });
        entries.truncate(3);
        seeds.insert(topic.clone(), entries);
    }

    let mut out: Vec<SftExample> = included
        .iter()
        .map(|e| SftExample {
            instruction: e.query.clone(),
            output: e.response.clone(),
            topic: e.topic.clone(),
            provenance: Provenance::Original,
        })
        .collect();

    // Per-topic buffered variant streams.
    struct Stream<'a> {
        seed_entries: Vec<&'a MemoryEntry>,
        buffer: Vec<(usize, String)>, // (seed index, variant)
        calls: u64,
        max_calls: u64,
        dead: bool,
    }
    let mut streams: BTreeMap<String, Stream<'_>> = deficits
        .iter()
        .map(|(topic, deficit)| {
            (
                topic.clone(),
                Stream {
                    seed_entries: seeds[topic].clone(),
                    buffer: Vec::new(),
                    calls: 0,
                    max_calls: (*deficit as u64) * 4 + 4,
                    dead: false,
                },
            )
        })
        .collect();

    let mut accepted: BTreeMap<String, usize> = deficits.keys().map(|t| (t.clone(), 0)).collect();
    let mut current_l1 = l1_distance(&counts, &target);

    loop {
        // Most-underrepresented topic with remaining deficit and a live stream.
        let total: usize = counts.values().sum();
        let next_topic = deficits
            .iter()
            .filter(|(t, d)| accepted[*t] < **d && !streams[*t].dead)
            .map(|(t, _)| {
                let have = *counts.get(t).unwrap_or(&0) as f64 / total.max(1) as f64;
                (t.clone(), target[t] - have)
            })
            .filter(|(_, shortfall)| *shortfall > 0.0)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let Some((topic, _)) = next_topic else { break };

        // Pull one accepted variant for this topic.
        let mut produced = None;
        {
            let stream = streams.get_mut(&topic).expect("stream exists");
            while produced.is_none() {
                if let Some((seed_ix, text)) = stream.buffer.pop() {
                    let seed_entry = stream.seed_entries[seed_ix];
                    if matches!(validate_generated(&text, seed_entry, ctx)?, Validation::Accept) {
                        produced = Some((seed_entry, text));
                    }
                    continue;
                }
                if stream.calls >= stream.max_calls {
                    stream.dead = true;
                    log::warn!("topic '{topic}' exhausted generation attempts with deficit remaining");
                    break;
                }
                let seed_ix = (stream.calls as usize) % stream.seed_entries.len();
                let seed_entry = stream.seed_entries[seed_ix];
                let sub_seed = derive_seed(
                    derive_seed(cfg.generator_seed, &topic, &[]),
                    "topic_expansion",
                    &[seed_entry.entry_id, stream.calls],
                );
                stream.calls += 1;
                match ctx.generator.generate(
                    TOPIC_EXPANSION_PROMPT,
                    &seed_entry.response,
                    cfg.variants_per_sample,
                    sub_seed,
                ) {
                    Ok(variants) => {
                        // Reverse so pop() consumes in generation order.
                        for v in variants.into_iter().rev() {
                            stream.buffer.push((seed_ix, v));
                        }
                    }
                    Err(e) => {
                        stream.dead = true;
                        log::warn!("generator failed for topic '{topic}': {e}; topic skipped");
                    }
                }
            }
        }
        let Some((seed_entry, text)) = produced else { continue };

        // Guard: an accepted example must not increase the L1 distance.
        let mut trial = counts.clone();
        *trial.entry(topic.clone()).or_insert(0) += 1;
        let trial_l1 = l1_distance(&trial, &target);
        if trial_l1 > current_l1 + 1e-12 {
            break;
        }
        counts = trial;
        current_l1 = trial_l1;
        *accepted.get_mut(&topic).unwrap() += 1;
        out.push(SftExample {
            instruction: seed_entry.query.clone(),
            output: text,
            topic: topic.clone(),
            provenance: Provenance::Generated,
        });
    }

    Ok(out)
}

pub fn write_sft_jsonl(path: &Path, examples: &[SftExample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        writeln!(w, "{}", serde_json::to_string(ex)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sft_jsonl(path: &Path) -> Result<Vec<SftExample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("sft line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}", serde_json::to_string(p)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PreferencePair>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("pairs line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
