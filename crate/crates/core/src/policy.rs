//! Transparent toy policy model.
//!
//! A bigram log-linear language model: one logit row per context token (plus
//! a start row), softmax-normalized per row. Small enough that every
//! probability, score, and gradient can be audited by hand, yet it carries a
//! proper likelihood s(x, y) = log p(y | x) for preference optimization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Hard cap on vocabulary size (including the unknown bucket).
pub const MAX_VOCAB: usize = 256;

/// Index of the unknown-token bucket.
pub const UNK: TokenId = 0;

/// Training stage marker; stages must advance init -> sft -> dpo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Sft,
    Dpo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyModel {
    pub version: u32,
    pub stage: Stage,
    /// Ordered token set; index 0 is the unknown bucket.
    pub vocabulary: Vec<String>,
    /// (V + 1) x V logits, row-major; row V is the start context.
    pub theta: Vec<f64>,
    /// Training configuration of the last completed stage, if any.
    pub config_used: Option<crate::trainer::TrainingConfig>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl PartialEq for PolicyModel {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.stage == other.stage
            && self.vocabulary == other.vocabulary
            && self.theta == other.theta
    }
}

/// Whitespace-and-lowercase tokenizer shared by every text surface.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

impl PolicyModel {
    /// Build a zero-initialized model over the vocabulary of a corpus.
    /// Index 0 is reserved for the unknown bucket; tokens beyond the cap
    /// fall into it.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Result<Self> {
        let mut vocabulary = vec!["<unk>".to_string()];
        let mut index = HashMap::new();
        index.insert("<unk>".to_string(), 0);
        for text in corpus {
            for tok in tokenize_text(text) {
                if !index.contains_key(&tok) {
                    if vocabulary.len() >= MAX_VOCAB {
                        log::warn!("vocabulary cap {MAX_VOCAB} reached; '{tok}' mapped to <unk>");
                        continue;
                    }
                    index.insert(tok.clone(), vocabulary.len());
                    vocabulary.push(tok);
                }
            }
        }
        let v = vocabulary.len();
        Ok(PolicyModel {
            version: 0,
            stage: Stage::Init,
            vocabulary,
            theta: vec![0.0; (v + 1) * v],
            config_used: None,
            index,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Context row index used when there is no previous token.
    pub fn start_context(&self) -> usize {
        self.vocab_size()
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn token_id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Tokenize text into ids, mapping out-of-vocabulary tokens to the
    /// unknown bucket.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize_text(text).iter().map(|t| self.token_id(t)).collect()
    }

    fn logits_row(&self, ctx: usize) -> &[f64] {
        let v = self.vocab_size();
        &self.theta[ctx * v..(ctx + 1) * v]
    }

    /// Log next-token probabilities for a context row (log-softmax).
    pub fn log_probs(&self, ctx: usize) -> Vec<f64> {
        let row = self.logits_row(ctx);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        row.iter().map(|x| x - log_z).collect()
    }

    /// Next-token probabilities for a context row.
    pub fn probs(&self, ctx: usize) -> Vec<f64> {
        self.log_probs(ctx).iter().map(|lp| lp.exp()).collect()
    }

    /// Every softmax row must sum to 1 within the tolerance.
    pub fn distribution_is_proper(&self, tol: f64) -> bool {
        (0..=self.vocab_size()).all(|ctx| {
            let sum: f64 = self.probs(ctx).iter().sum();
            (sum - 1.0).abs() <= tol
        })
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        for &id in ids {
            if id >= self.vocab_size() {
                return Err(Error::OutOfVocab(format!(
                    "token id {id} >= vocabulary size {}",
                    self.vocab_size()
                )));
            }
        }
        Ok(())
    }

    /// Transition contexts for response ids after prompt ids: the first
    /// response token conditions on the last prompt token (or the start row
    /// when the prompt is empty), later ones on their predecessor.
    pub fn transitions(&self, x: &[TokenId], y: &[TokenId]) -> Vec<(usize, TokenId)> {
        let mut ctx = x.last().copied().unwrap_or(self.start_context());
        let mut out = Vec::with_capacity(y.len());
        for &tok in y {
            out.push((ctx, tok));
            ctx = tok;
        }
        out
    }

    /// Sequence score s(x, y) = log p(y | x), additive over tokens.
    /// Empty y scores 0.
    pub fn score_sequence(&self, x: &[TokenId], y: &[TokenId]) -> Result<f64> {
        self.check_ids(x)?;
        self.check_ids(y)?;
        let mut total = 0.0;
        let mut cached_ctx = usize::MAX;
        let mut cached_lp: Vec<f64> = Vec::new();
        for (ctx, tok) in self.transitions(x, y) {
            if ctx != cached_ctx {
                cached_lp = self.log_probs(ctx);
                cached_ctx = ctx;
            }
            total += cached_lp[tok];
        }
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite sequence score".into()));
        }
        Ok(total)
    }

    /// Score raw prompt/response text (out-of-vocabulary tokens hit the
    /// unknown bucket).
    pub fn score_text(&self, x: &str, y: &str) -> Result<f64> {
        self.score_sequence(&self.encode(x), &self.encode(y))
    }

    /// Greedy decode: repeatedly take the argmax next token (lowest index on
    /// ties). Returns the decoded tokens as strings.
    pub fn greedy_decode(&self, prompt: &str, len: usize) -> Vec<String> {
        let ids = self.encode(prompt);
        let mut ctx = ids.last().copied().unwrap_or(self.start_context());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let probs = self.probs(ctx);
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            out.push(self.vocabulary[best].clone());
            ctx = best;
        }
        out
    }

    /// Temperature sampling decode; used by the simulator for exploration.
    pub fn sample_decode(&self, prompt: &str, len: usize, temperature: f64, rng: &mut crate::seed::Rng) -> Vec<String> {
        let ids = self.encode(prompt);
        let mut ctx = ids.last().copied().unwrap_or(self.start_context());
        let mut out = Vec::with_capacity(len);
        let v = self.vocab_size();
        for _ in 0..len {
            let row = self.logits_row(ctx);
            let scaled: Vec<f64> = row.iter().map(|x| x / temperature.max(1e-9)).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
            let pick = if v == 1 { 0 } else { rng.weighted_index(&weights) };
            out.push(self.vocabulary[pick].clone());
            ctx = pick;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut model: PolicyModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let v = model.vocab_size();
        if model.theta.len() != (v + 1) * v {
            return Err(Error::InvalidInput(format!(
                "theta has {} values, expected {}",
                model.theta.len(),
                (v + 1) * v
            )));
        }
        model.rebuild_index();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_model(tokens: &[&str]) -> PolicyModel {
        PolicyModel::from_corpus(std::iter::once(tokens.join(" ").as_str())).unwrap()
    }

    #[test]
    fn vocabulary_is_ordered_with_unk_first() {
        let m = uniform_model(&["b", "a", "b", "c"]);
        assert_eq!(m.vocabulary, vec!["<unk>", "b", "a", "c"]);
        assert_eq!(m.token_id("a"), 2);
        assert_eq!(m.token_id("zzz"), UNK);
    }

    #[test]
    fn uniform_score_matches_closed_form() {
        // |V| = 4 (unk + 3 tokens), zero logits: each step is log(1/4).
        let m = uniform_model(&["a", "b", "c"]);
        assert_eq!(m.vocab_size(), 4);
        let score = m.score_text("a", "b c").unwrap();
        let expected = 2.0 * (1.0f64 / 4.0).ln();
        assert!((score - expected).abs() < 1e-12);
        assert!((expected + 2.772588722239781).abs() < 1e-12);
    }

    #[test]
    fn empty_response_scores_zero() {
        let m = uniform_model(&["a", "b"]);
        assert_eq!(m.score_sequence(&[1], &[]).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_chain_rule_oracle() {
        let mut m = uniform_model(&["a", "b", "c"]);
        // A fixed non-trivial parameter pattern.
        for (i, v) in m.theta.iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).sin();
        }
        let x = m.encode("a b");
        let y = m.encode("c a c");

        // Explicit chain-rule product computed independently.
        let mut expected = 0.0;
        let mut ctx = *x.last().unwrap();
        for &tok in &y {
            let v = m.vocab_size();
            let row = &m.theta[ctx * v..(ctx + 1) * v];
            let z: f64 = row.iter().map(|l| l.exp()).sum();
            expected += (row[tok].exp() / z).ln();
            ctx = tok;
        }
        let got = m.score_sequence(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_ids_error() {
        let m = uniform_model(&["a"]);
        assert!(m.score_sequence(&[99], &[0]).is_err());
    }

    #[test]
    fn distribution_is_proper_after_arbitrary_theta() {
        let mut m = uniform_model(&["a", "b", "c", "d"]);
        for (i, v) in m.theta.iter_mut().enumerate() {
            *v = ((i * 31 % 17) as f64) - 8.0;
        }
        assert!(m.distribution_is_proper(1e-9));
    }

    #[test]
    fn greedy_decode_breaks_ties_low_index() {
        let m = uniform_model(&["a", "b"]);
        let toks = m.greedy_decode("a", 3);
        assert_eq!(toks, vec!["<unk>", "<unk>", "<unk>"]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = uniform_model(&["a", "b", "c"]);
        m.theta[3] = 1.5;
        m.version = 2;
        m.stage = Stage::Sft;
        m.save(&path).unwrap();
        let loaded = PolicyModel::load(&path).unwrap();
        assert_eq!(m, loaded);
        assert_eq!(loaded.token_id("b"), m.token_id("b"));
    }
}
