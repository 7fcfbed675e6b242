//! Topic-labeled preference memory with a threshold trigger.
//!
//! Each scored interaction is classified into a topic from a predefined set
//! and appended to a JSON Lines log as a (content, score, topic) triple plus
//! a classifier confidence. Low-confidence entries stay in the log but are
//! flagged out of expansion. The pool fires a self-evolution trigger exactly
//! on every N-th included entry.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::external::ExternalTopicBackend;
use crate::backends::topic::KeywordTopicBackend;
use crate::error::{Error, Result};

/// Verbatim classification prompt sent to external topic backends.
pub const TOPIC_PROMPT: &str =
    "Please classify the following input into one of the predefined categories. Do not add explanations or extra text.";

/// A topic label validated against the configured set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicLabel(String);

impl TopicLabel {
    pub fn new(name: impl Into<String>, topic_set: &[String]) -> Result<Self> {
        let name = name.into();
        if topic_set.contains(&name) {
            Ok(TopicLabel(name))
        } else {
            Err(Error::Classification(format!("label '{name}' outside the configured topic set")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for TopicLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One stored interaction: content, satisfaction score, topic, confidence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MemoryEntry {
    pub entry_id: u64,
    pub query: String,
    pub response: String,
    pub score: f64,
    pub topic: String,
    pub confidence: f64,
    /// True when the classification confidence fell below the filter; the
    /// entry stays in the log but contributes nothing to expansion.
    pub excluded: bool,
}

/// Topic classification front-end.
///
/// The built-in variant classifies once by keyword counts. The external
/// variant samples the child process several times, validates every label
/// against the topic set, retries invalid answers, and falls back to the
/// built-in backend when retries are exhausted; its confidence is the
/// majority vote share across samples.
pub enum TopicClassifier {
    Builtin(KeywordTopicBackend),
    External {
        backend: ExternalTopicBackend,
        fallback: KeywordTopicBackend,
        /// Retries per sample on out-of-set or malformed answers.
        retries: usize,
        /// Number of sampled classifications for the agreement confidence.
        samples: usize,
    },
}

impl TopicClassifier {
    pub fn topic_names(&self) -> Vec<String> {
        match self {
            TopicClassifier::Builtin(b) => b.topic_names(),
            TopicClassifier::External { fallback, .. } => fallback.topic_names(),
        }
    }
}

/// Classify a (query, response) pair into a topic with a confidence in
/// [0, 1]. The returned label is always from the configured set.
pub fn classify_topic(
    query: &str,
    response: &str,
    classifier: &TopicClassifier,
) -> Result<(TopicLabel, f64)> {
    let input = format!("{query}\n{response}");
    let topic_set = classifier.topic_names();
    if topic_set.is_empty() {
        return Err(Error::Classification("empty topic set".into()));
    }
    match classifier {
        TopicClassifier::Builtin(backend) => {
            let (label, confidence) = backend.classify(&input);
            Ok((TopicLabel::new(label, &topic_set)?, confidence))
        }
        TopicClassifier::External { backend, fallback, retries, samples } => {
            let mut votes: Vec<String> = Vec::new();
            for _ in 0..*samples {
                let mut label = None;
                for _ in 0..=*retries {
                    match backend.classify_raw(TOPIC_PROMPT, &input, &topic_set) {
                        Ok(raw) if topic_set.contains(&raw) => {
                            label = Some(raw);
                            break;
                        }
                        Ok(raw) => {
                            log::warn!("external topic backend returned out-of-set label '{raw}'; retrying");
                        }
                        Err(e) => {
                            log::warn!("external topic backend failed: {e}; retrying");
                        }
                    }
                }
                match label {
                    Some(l) => votes.push(l),
                    None => {
                        log::warn!("external topic backend exhausted retries; falling back to built-in");
                        let (l, c) = fallback.classify(&input);
                        return Ok((TopicLabel::new(l, &topic_set)?, c));
                    }
                }
            }
            let mut best: Option<(&String, usize)> = None;
            for v in &votes {
                let n = votes.iter().filter(|x| *x == v).count();
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((v, n));
                }
            }
            let (label, count) = best.expect("samples >= 1");
            let confidence = count as f64 / votes.len() as f64;
            Ok((TopicLabel::new(label.clone(), &topic_set)?, confidence))
        }
    }
}

/// Result of one store call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOutcome {
    pub entry_id: u64,
    pub excluded: bool,
    /// True when this store fired the self-evolution trigger.
    pub trigger: bool,
}

/// Append-only memory pool with an optional on-disk JSON Lines log.
///
/// Single-writer: callers serialize `store` invocations. Snapshots never
/// delete entries; only the trigger counter resets.
pub struct MemoryPool {
    entries: Vec<MemoryEntry>,
    trigger_threshold: usize,
    entries_since_last_trigger: usize,
    snapshot_cursor: usize,
    log_path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
}

impl MemoryPool {
    pub fn in_memory(trigger_threshold: usize) -> Result<Self> {
        if trigger_threshold == 0 {
            return Err(Error::InvalidInput("trigger threshold must be positive".into()));
        }
        Ok(MemoryPool {
            entries: Vec::new(),
            trigger_threshold,
            entries_since_last_trigger: 0,
            snapshot_cursor: 0,
            log_path: None,
            writer: None,
        })
    }

    /// Open a pool backed by a fresh (or truncated) log file.
    pub fn create(path: &Path, trigger_threshold: usize) -> Result<Self> {
        let mut pool = Self::in_memory(trigger_threshold)?;
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        pool.log_path = Some(path.to_path_buf());
        pool.writer = Some(BufWriter::new(file));
        Ok(pool)
    }

    /// Rebuild pool state by replaying an existing log.
    ///
    /// The trigger counter is the number of included entries modulo N, and
    /// the snapshot cursor lands just after the last fully-consumed block of
    /// N included entries. This matches the orchestrator discipline of
    /// snapshotting immediately on every trigger.
    pub fn replay(path: &Path, trigger_threshold: usize) -> Result<Self> {
        let mut pool = Self::in_memory(trigger_threshold)?;
        let reader = BufReader::new(File::open(path)?);
        let mut included = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry = serde_json::from_str(&line).map_err(|e| {
                Error::InvalidInput(format!("memory log line {}: {e}", lineno + 1))
            })?;
            if !entry.excluded {
                included += 1;
                if included.is_multiple_of(trigger_threshold) {
                    pool.snapshot_cursor = pool.entries.len() + 1;
                }
            }
            pool.entries.push(entry);
        }
        pool.entries_since_last_trigger = included % trigger_threshold;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        pool.log_path = Some(path.to_path_buf());
        pool.writer = Some(BufWriter::new(file));
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trigger_threshold(&self) -> usize {
        self.trigger_threshold
    }

    pub fn entries_since_last_trigger(&self) -> usize {
        self.entries_since_last_trigger
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn included_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.excluded).count()
    }

    pub fn next_entry_id(&self) -> u64 {
        self.entries.len() as u64
    }

    /// Store one classified, scored interaction.
    ///
    /// Entries below `min_confidence` are kept but flagged excluded and do
    /// not advance the trigger counter. Returns the trigger flag; the
    /// counter resets when it fires. On a persistence failure the pool state
    /// is unchanged.
    pub fn store(
        &mut self,
        query: String,
        response: String,
        score: f64,
        topic: &TopicLabel,
        confidence: f64,
        min_confidence: f64,
    ) -> Result<StoreOutcome> {
        if !(-1.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!("score {score} outside [-1, 1]")));
        }
        let entry = MemoryEntry {
            entry_id: self.next_entry_id(),
            query,
            response,
            score,
            topic: topic.as_str().to_string(),
            confidence,
            excluded: confidence < min_confidence,
        };
        if let Some(w) = self.writer.as_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        let excluded = entry.excluded;
        let entry_id = entry.entry_id;
        self.entries.push(entry);
        let mut trigger = false;
        if !excluded {
            self.entries_since_last_trigger += 1;
            if self.entries_since_last_trigger == self.trigger_threshold {
                trigger = true;
                self.entries_since_last_trigger = 0;
            }
        }
        Ok(StoreOutcome { entry_id, excluded, trigger })
    }

    /// All included entries accumulated since the previous snapshot, in
    /// insertion order. Advances the snapshot cursor; never deletes.
    pub fn snapshot(&mut self) -> Vec<MemoryEntry> {
        let batch: Vec<MemoryEntry> = self.entries[self.snapshot_cursor..]
            .iter()
            .filter(|e| !e.excluded)
            .cloned()
            .collect();
        self.snapshot_cursor = self.entries.len();
        batch
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }
}
