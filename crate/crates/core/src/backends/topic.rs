//! Topic classification backends.
//!
//! The built-in backend scores each configured topic by keyword hits and
//! reports a margin-based confidence (top share minus runner-up share).
//! Texts with no keyword hits fall back to the first configured topic with
//! confidence 1/|topics|.

use serde::{Deserialize, Serialize};

use crate::backends::sentiment::word_tokens;
use crate::error::{Error, Result};

/// A named topic and the keywords that indicate it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TopicSpec {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Keyword-count topic classifier.
#[derive(Debug, Clone)]
pub struct KeywordTopicBackend {
    topics: Vec<TopicSpec>,
}

impl KeywordTopicBackend {
    pub fn new(topics: Vec<TopicSpec>) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::Classification("empty topic set".into()));
        }
        Ok(KeywordTopicBackend { topics })
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.name.clone()).collect()
    }

    /// Classify text into one of the configured topics.
    ///
    /// Returns the label and a confidence in [0, 1]: the margin between the
    /// best and second-best normalized hit shares, or 1/|topics| when the
    /// text contains no keyword at all.
    pub fn classify(&self, text: &str) -> (String, f64) {
        let tokens = word_tokens(text);
        let hits: Vec<usize> = self
            .topics
            .iter()
            .map(|t| {
                tokens
                    .iter()
                    .filter(|tok| t.keywords.iter().any(|k| k.eq_ignore_ascii_case(tok)))
                    .count()
            })
            .collect();
        let total: usize = hits.iter().sum();
        if total == 0 {
            return (
                self.topics[0].name.clone(),
                1.0 / self.topics.len() as f64,
            );
        }
        if self.topics.len() == 1 {
            return (self.topics[0].name.clone(), 1.0);
        }
        let shares: Vec<f64> = hits.iter().map(|h| *h as f64 / total as f64).collect();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        // Stable by configured topic order on ties.
        order.sort_by(|&a, &b| shares[b].partial_cmp(&shares[a]).unwrap());
        let best = order[0];
        let margin = (shares[best] - shares[order[1]]).clamp(0.0, 1.0);
        (self.topics[best].name.clone(), margin)
    }
}

/// Default desk-scale topic set used by the bundled configuration.
pub fn default_topics() -> Vec<TopicSpec> {
    vec![
        TopicSpec {
            name: "health".into(),
            keywords: vec![
                "health".into(),
                "medicine".into(),
                "doctor".into(),
                "symptom".into(),
                "treatment".into(),
                "wellness".into(),
                "physician".into(),
                "medication".into(),
            ],
        },
        TopicSpec {
            name: "sports".into(),
            keywords: vec![
                "game".into(),
                "team".into(),
                "match".into(),
                "player".into(),
                "training".into(),
                "coach".into(),
                "league".into(),
                "tournament".into(),
            ],
        },
        TopicSpec {
            name: "technology".into(),
            keywords: vec![
                "code".into(),
                "software".into(),
                "computer".into(),
                "network".into(),
                "data".into(),
                "program".into(),
                "hardware".into(),
                "algorithm".into(),
            ],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> KeywordTopicBackend {
        KeywordTopicBackend::new(default_topics()).unwrap()
    }

    #[test]
    fn keyword_dominance_wins_with_margin() {
        let (label, conf) = backend().classify("what treatment does the doctor suggest for this symptom");
        assert_eq!(label, "health");
        assert!(conf > 0.5);
    }

    #[test]
    fn no_keywords_means_uniform_confidence() {
        let (label, conf) = backend().classify("completely unrelated ramble");
        assert_eq!(label, "health"); // first configured topic
        assert!((conf - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_text_has_reduced_margin() {
        let (label, conf) = backend().classify("the doctor watched the game");
        assert!(label == "health" || label == "sports");
        assert!(conf < 0.5);
    }
}
