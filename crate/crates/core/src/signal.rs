//! Censor signal extraction and preprocessing.
//!
//! Five signals are pulled out of each user-model interaction: explicit
//! feedback, dwell level, query-response coherence, redundancy against prior
//! responses (stored as a penalty in [-1, 0]), and sentiment polarity. The
//! dwell level passes through a U-shaped transform peaking at the medium
//! level before fusion.

use serde::{Deserialize, Serialize};

use crate::backends::embed::{cosine, EmbeddingBackend};
use crate::backends::sentiment::{word_tokens, SentimentBackend};
use crate::error::{Error, Result};

/// Number of Censor signals.
pub const SIGNAL_DIM: usize = 5;

/// Fixed signal index order used by every weight and signal vector.
pub mod idx {
    pub const FB: usize = 0;
    pub const DWELL: usize = 1;
    pub const COH: usize = 2;
    pub const SIM: usize = 3;
    pub const SENT: usize = 4;
}

/// One raw user-model interaction as ingested from the log.
///
/// `prior_responses` must hold only responses with strictly earlier
/// timestamps than this interaction (caller contract).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Interaction {
    pub session_id: String,
    pub query: String,
    pub response: String,
    pub user_comment: Option<String>,
    /// 0 short, 1 medium, 2 long.
    pub dwell_level: u8,
    pub prior_responses: Vec<String>,
    pub timestamp_ms: i64,
}

impl Interaction {
    pub fn validate(&self) -> Result<()> {
        if self.dwell_level > 2 {
            return Err(Error::InvalidInput(format!(
                "dwell_level {} outside {{0,1,2}}",
                self.dwell_level
            )));
        }
        Ok(())
    }
}

/// The five raw Censor signals for one interaction, in index order
/// (fb, dwell, coherence, similarity, sentiment).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SignalVector {
    /// 1 for praise, 0 otherwise.
    pub fb: u8,
    /// Dwell level in {0, 1, 2}, pre-transform.
    pub dwell: u8,
    /// Cosine coherence of query and response, in [-1, 1].
    pub coherence: f64,
    /// Redundancy penalty, in [-1, 0]; more redundant is more negative.
    pub similarity: f64,
    /// Polarity; {-1, 0, +1} from live extraction, any real when stubbed.
    pub sentiment: f64,
}

impl SignalVector {
    /// Raw values in index order, dwell still untransformed.
    pub fn to_array(self) -> [f64; SIGNAL_DIM] {
        [
            f64::from(self.fb),
            f64::from(self.dwell),
            self.coherence,
            self.similarity,
            self.sentiment,
        ]
    }

    /// Build from an array in index order; fb and dwell must be integral
    /// and in range.
    pub fn from_array(a: [f64; SIGNAL_DIM]) -> Result<Self> {
        let fb = a[idx::FB];
        let dwell = a[idx::DWELL];
        if fb != 0.0 && fb != 1.0 {
            return Err(Error::InvalidInput(format!("fb {fb} outside {{0,1}}")));
        }
        if dwell != 0.0 && dwell != 1.0 && dwell != 2.0 {
            return Err(Error::InvalidInput(format!("dwell {dwell} outside {{0,1,2}}")));
        }
        Ok(SignalVector {
            fb: fb as u8,
            dwell: dwell as u8,
            coherence: a[idx::COH],
            similarity: a[idx::SIM],
            sentiment: a[idx::SENT],
        })
    }

    /// Apply the dwell transform, leaving the other components unchanged.
    pub fn transform(&self) -> TransformedSignals {
        TransformedSignals {
            values: [
                f64::from(self.fb),
                dwell_transform(f64::from(self.dwell)).expect("dwell level in range"),
                self.coherence,
                self.similarity,
                self.sentiment,
            ],
        }
    }
}

/// Signals after preprocessing: (fb, f(dwell), coherence, similarity,
/// sentiment), where f is the U-shaped dwell transform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TransformedSignals {
    pub values: [f64; SIGNAL_DIM],
}

impl TransformedSignals {
    pub fn sentiment(&self) -> f64 {
        self.values[idx::SENT]
    }
}

/// Degraded-mode markers produced during extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalWarning {
    ZeroNormEmbedding,
    SentimentBackendFailure,
}

/// Extraction output: the signal vector plus any degraded-mode warnings.
#[derive(Debug, Clone)]
pub struct ExtractedSignals {
    pub vector: SignalVector,
    pub warnings: Vec<SignalWarning>,
}

/// U-shaped dwell transform: -0.5 * (dwell - 1)^2 + 0.5.
///
/// Peaks at 0.5 exactly when dwell = 1 and is 0 at both ends of [0, 2].
pub fn dwell_transform(dwell: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&dwell) {
        return Err(Error::InvalidInput(format!("dwell {dwell} outside [0, 2]")));
    }
    Ok(-0.5 * (dwell - 1.0) * (dwell - 1.0) + 0.5)
}

/// Praise detection rules: a praise token that is not negated within the
/// preceding window counts as praise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PraiseRules {
    pub tokens: Vec<String>,
}

impl Default for PraiseRules {
    fn default() -> Self {
        PraiseRules {
            tokens: [
                "thanks", "thank", "thx", "great", "perfect", "awesome",
                "excellent", "amazing", "helpful", "love", "clear", "nice",
                "good", "brilliant", "exactly", "wonderful",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

const PRAISE_NEGATORS: &[&str] = &[
    "not", "no", "never", "don't", "doesn't", "didn't", "isn't", "wasn't",
    "hardly", "barely",
];

/// Binary explicit feedback: 1 iff the comment matches the praise rules.
/// Absent comments are 0.
pub fn extract_explicit_feedback(comment: Option<&str>, rules: &PraiseRules) -> u8 {
    let Some(text) = comment else { return 0 };
    let tokens = word_tokens(text);
    for (i, tok) in tokens.iter().enumerate() {
        if rules.tokens.iter().any(|p| p == tok) {
            let start = i.saturating_sub(3);
            let negated = tokens[start..i]
                .iter()
                .any(|t| PRAISE_NEGATORS.contains(&t.as_str()));
            if !negated {
                return 1;
            }
        }
    }
    0
}

fn coherence_flagged(
    query: &str,
    response: &str,
    embedder: &dyn EmbeddingBackend,
) -> Result<(f64, Option<SignalWarning>)> {
    if query.is_empty() || response.is_empty() {
        return Err(Error::InvalidInput("coherence requires non-empty texts".into()));
    }
    let q = embedder.embed(query);
    let r = embedder.embed(response);
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if zero(&q) || zero(&r) {
        log::warn!("zero-norm embedding; coherence degraded to 0");
        return Ok((0.0, Some(SignalWarning::ZeroNormEmbedding)));
    }
    Ok((cosine(&q, &r), None))
}

/// Cosine coherence between query and response embeddings. Zero-norm
/// embeddings degrade to 0.
pub fn coherence(query: &str, response: &str, embedder: &dyn EmbeddingBackend) -> Result<f64> {
    coherence_flagged(query, response, embedder).map(|(v, _)| v)
}

/// Redundancy penalty: negated maximum cosine between the response and any
/// prior response, clamped to [-1, 0]. Empty prior list gives 0.
pub fn redundancy(response: &str, prior_responses: &[String], embedder: &dyn EmbeddingBackend) -> f64 {
    if prior_responses.is_empty() {
        return 0.0;
    }
    let r = embedder.embed(response);
    let max_cos = prior_responses
        .iter()
        .map(|p| cosine(&r, &embedder.embed(p)))
        .fold(f64::NEG_INFINITY, f64::max);
    (-max_cos).clamp(-1.0, 0.0)
}

fn sentiment_flagged(
    text: &str,
    backend: &dyn SentimentBackend,
) -> Result<(f64, Option<SignalWarning>)> {
    if text.is_empty() {
        return Err(Error::InvalidInput("sentiment requires non-empty text".into()));
    }
    match backend.polarity(text) {
        Ok(v) => Ok((v, None)),
        Err(e) => {
            log::warn!("sentiment backend failed ({e}); degraded to 0");
            Ok((0.0, Some(SignalWarning::SentimentBackendFailure)))
        }
    }
}

/// Sentiment polarity of the text: -1, 0, or +1. Backend failures degrade
/// to 0 rather than erroring.
pub fn sentiment(text: &str, backend: &dyn SentimentBackend) -> Result<f64> {
    sentiment_flagged(text, backend).map(|(v, _)| v)
}

/// Extract all five signals from an interaction.
///
/// Sentiment is taken from the user comment when present (the most direct
/// reaction text), otherwise from the model response.
pub fn extract_signals(
    interaction: &Interaction,
    praise: &PraiseRules,
    embedder: &dyn EmbeddingBackend,
    sentiment_backend: &dyn SentimentBackend,
) -> Result<ExtractedSignals> {
    interaction.validate()?;
    let mut warnings = Vec::new();

    let fb = extract_explicit_feedback(interaction.user_comment.as_deref(), praise);
    let (coh, w1) = coherence_flagged(&interaction.query, &interaction.response, embedder)?;
    if let Some(w) = w1 {
        warnings.push(w);
    }
    let sim = redundancy(&interaction.response, &interaction.prior_responses, embedder);
    let sentiment_text = interaction
        .user_comment
        .as_deref()
        .filter(|c| !c.is_empty())
        .unwrap_or(&interaction.response);
    let (sent, w2) = sentiment_flagged(sentiment_text, sentiment_backend)?;
    if let Some(w) = w2 {
        warnings.push(w);
    }

    Ok(ExtractedSignals {
        vector: SignalVector {
            fb,
            dwell: interaction.dwell_level,
            coherence: coh,
            similarity: sim,
            sentiment: sent,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{LexiconSentiment, TrigramHashEmbedder};
    use proptest::prelude::*;

    #[test]
    fn dwell_transform_anchor_points() {
        assert_eq!(dwell_transform(1.0).unwrap(), 0.5);
        assert_eq!(dwell_transform(0.0).unwrap(), 0.0);
        assert_eq!(dwell_transform(2.0).unwrap(), 0.0);
    }

    #[test]
    fn dwell_transform_rejects_out_of_range() {
        assert!(dwell_transform(-0.1).is_err());
        assert!(dwell_transform(2.1).is_err());
    }

    #[test]
    fn praise_detection() {
        let rules = PraiseRules::default();
        assert_eq!(extract_explicit_feedback(Some("Very clear!"), &rules), 1);
        assert_eq!(extract_explicit_feedback(None, &rules), 0);
        assert_eq!(
            extract_explicit_feedback(Some("This doesn't answer my question."), &rules),
            0
        );
        assert_eq!(extract_explicit_feedback(Some("not helpful"), &rules), 0);
    }

    #[test]
    fn coherence_of_identical_texts_is_one() {
        let e = TrigramHashEmbedder::default();
        let c = coherence("alpha beta gamma", "alpha beta gamma", &e).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherence_rejects_empty_text() {
        let e = TrigramHashEmbedder::default();
        assert!(coherence("", "x", &e).is_err());
        assert!(coherence("x", "", &e).is_err());
    }

    #[test]
    fn coherence_of_orthogonal_embeddings_is_zero() {
        // Single disjoint trigrams land in different hash buckets, so the
        // count vectors are exactly orthogonal.
        let e = TrigramHashEmbedder::default();
        let (a, b) = ("aaa", "bbb");
        let va = e.embed(a);
        let vb = e.embed(b);
        assert!(va.iter().zip(&vb).all(|(x, y)| *x == 0.0 || *y == 0.0));
        assert_eq!(coherence(a, b, &e).unwrap(), 0.0);
    }

    /// Backends stubbed to the archetype values reproduce the praised-row
    /// signal vector exactly.
    #[test]
    fn stubbed_backends_reproduce_archetype_row() {
        struct StubEmbedder;
        impl EmbeddingBackend for StubEmbedder {
            fn embed(&self, text: &str) -> Vec<f64> {
                match text {
                    "query" => vec![0.92, (1.0f64 - 0.92 * 0.92).sqrt()],
                    "response" => vec![1.0, 0.0],
                    "prior" => vec![0.2, (1.0f64 - 0.04).sqrt()],
                    _ => vec![0.0, 0.0],
                }
            }
            fn dim(&self) -> usize {
                2
            }
        }
        struct StubSentiment;
        impl SentimentBackend for StubSentiment {
            fn polarity(&self, _: &str) -> crate::error::Result<f64> {
                Ok(1.0)
            }
        }
        let ix = Interaction {
            session_id: "s".into(),
            query: "query".into(),
            response: "response".into(),
            user_comment: Some("Very clear!".into()),
            dwell_level: 1,
            prior_responses: vec!["prior".to_string()],
            timestamp_ms: 0,
        };
        let out = extract_signals(&ix, &PraiseRules::default(), &StubEmbedder, &StubSentiment).unwrap();
        assert_eq!(out.vector.fb, 1);
        assert_eq!(out.vector.dwell, 1);
        assert!((out.vector.coherence - 0.92).abs() < 1e-12);
        assert!((out.vector.similarity - -0.2).abs() < 1e-12);
        assert_eq!(out.vector.sentiment, 1.0);
    }

    /// Independent oracle: recompute trigram counts in a HashMap and take the
    /// cosine over hash buckets directly, without going through the embedder.
    #[test]
    fn coherence_matches_independent_ngram_oracle() {
        use std::collections::HashMap;

        fn bucket_counts(text: &str, dim: usize) -> HashMap<usize, f64> {
            let chars: Vec<char> = text.to_lowercase().chars().collect();
            let grams: Vec<String> = if chars.len() < 3 {
                if chars.is_empty() { vec![] } else { vec![chars.iter().collect()] }
            } else {
                chars.windows(3).map(|w| w.iter().collect()).collect()
            };
            let mut counts: HashMap<usize, f64> = HashMap::new();
            for g in grams {
                // Independent FNV-1a implementation.
                let mut h: u64 = 0xcbf29ce484222325;
                for b in g.as_bytes() {
                    h ^= u64::from(*b);
                    h = h.wrapping_mul(0x100000001b3);
                }
                *counts.entry((h % dim as u64) as usize).or_insert(0.0) += 1.0;
            }
            counts
        }

        let query = "what is the difference between supervised and unsupervised learning";
        let response = "supervised learning uses labeled data while unsupervised learning does not";
        let dim = 256;

        let a = bucket_counts(query, dim);
        let b = bucket_counts(response, dim);
        let dot: f64 = a.iter().map(|(k, v)| v * b.get(k).copied().unwrap_or(0.0)).sum();
        let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
        let expected = dot / (na * nb);

        let e = TrigramHashEmbedder::new(dim);
        let got = coherence(query, response, &e).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, oracle {expected}");
    }

    #[test]
    fn redundancy_cases() {
        let e = TrigramHashEmbedder::default();
        assert_eq!(redundancy("anything", &[], &e), 0.0);
        let r = redundancy("same text here", &["same text here".to_string()], &e);
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundancy_takes_the_larger_cosine() {
        let e = TrigramHashEmbedder::default();
        let priors = vec![
            "the doctor explained the treatment".to_string(),
            "completely different words entirely".to_string(),
        ];
        let response = "the doctor explained the symptom";
        // Brute force over both priors.
        let rv = e.embed(response);
        let expected = -priors
            .iter()
            .map(|p| cosine(&rv, &e.embed(p)))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(redundancy(response, &priors, &e), expected.clamp(-1.0, 0.0));
    }

    #[test]
    fn sentiment_table_cases() {
        let s = LexiconSentiment;
        assert_eq!(sentiment("Very clear!", &s).unwrap(), 1.0);
        assert_eq!(sentiment("This doesn't answer my question.", &s).unwrap(), -1.0);
        assert_eq!(sentiment("the sky sometimes has clouds", &s).unwrap(), 0.0);
    }

    struct FailingSentiment;
    impl SentimentBackend for FailingSentiment {
        fn polarity(&self, _: &str) -> crate::error::Result<f64> {
            Err(crate::error::Error::Backend("down".into()))
        }
    }

    #[test]
    fn sentiment_backend_failure_degrades_to_zero() {
        let ix = Interaction {
            session_id: "s".into(),
            query: "tell me about doctor symptom".into(),
            response: "the doctor explains the symptom".into(),
            user_comment: None,
            dwell_level: 1,
            prior_responses: vec![],
            timestamp_ms: 0,
        };
        let out = extract_signals(
            &ix,
            &PraiseRules::default(),
            &TrigramHashEmbedder::default(),
            &FailingSentiment,
        )
        .unwrap();
        assert_eq!(out.vector.sentiment, 0.0);
        assert!(out.warnings.contains(&SignalWarning::SentimentBackendFailure));
    }

    #[test]
    fn extract_signals_matches_per_signal_oracle() {
        let e = TrigramHashEmbedder::default();
        let s = LexiconSentiment;
        let rules = PraiseRules::default();
        let ix = Interaction {
            session_id: "s1".into(),
            query: "explain the treatment for this symptom".into(),
            response: "the treatment involves rest and medication".into(),
            user_comment: Some("Thanks, very clear!".into()),
            dwell_level: 1,
            prior_responses: vec!["an earlier response about doctors".to_string()],
            timestamp_ms: 123,
        };
        let out = extract_signals(&ix, &rules, &e, &s).unwrap();
        assert_eq!(out.vector.fb, extract_explicit_feedback(ix.user_comment.as_deref(), &rules));
        assert_eq!(out.vector.dwell, 1);
        assert_eq!(out.vector.coherence, coherence(&ix.query, &ix.response, &e).unwrap());
        assert_eq!(out.vector.similarity, redundancy(&ix.response, &ix.prior_responses, &e));
        assert_eq!(out.vector.sentiment, sentiment("Thanks, very clear!", &s).unwrap());
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn extraction_is_deterministic() {
        let e = TrigramHashEmbedder::default();
        let s = LexiconSentiment;
        let rules = PraiseRules::default();
        let ix = Interaction {
            session_id: "s".into(),
            query: "what about the game tonight".into(),
            response: "the team plays the match at eight".into(),
            user_comment: None,
            dwell_level: 2,
            prior_responses: vec!["the team trained all week".to_string()],
            timestamp_ms: 5,
        };
        let a = extract_signals(&ix, &rules, &e, &s).unwrap();
        let b = extract_signals(&ix, &rules, &e, &s).unwrap();
        assert_eq!(a.vector, b.vector);
    }

    proptest! {
        #[test]
        fn dwell_transform_symmetric_about_one(x in 0.0f64..=2.0) {
            let a = dwell_transform(x).unwrap();
            let b = dwell_transform(2.0 - x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a <= 0.5);
        }

        #[test]
        fn dwell_transform_max_only_at_one(x in 0.0f64..=2.0) {
            let v = dwell_transform(x).unwrap();
            if (x - 1.0).abs() > 1e-6 {
                prop_assert!(v < 0.5);
            }
        }

        #[test]
        fn redundancy_monotone_in_priors(
            priors in proptest::collection::vec("[a-z ]{3,20}", 0..5),
            extra in "[a-z ]{3,20}",
        ) {
            let e = TrigramHashEmbedder::default();
            let response = "a fixed response text";
            let before = redundancy(response, &priors, &e);
            let mut more = priors.clone();
            more.push(extra);
            let after = redundancy(response, &more, &e);
            prop_assert!(after <= before + 1e-12);
        }
    }
}
