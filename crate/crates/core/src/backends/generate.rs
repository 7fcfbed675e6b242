//! Response variant generation.
//!
//! The built-in generator is a deterministic rule-based paraphraser: synonym
//! substitution from a bundled table, token-order rotation, and length jitter
//! (truncation or filler extension). Given the same seed it always produces
//! the same variants, which keeps the whole expansion pipeline reproducible
//! without any model in the loop.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::seed::Rng;

pub trait GeneratorBackend: Send + Sync {
    /// Produce up to `n_variants` variants of `seed_text` under the given
    /// instruction prompt. `seed` controls any randomness; external
    /// backends are free to ignore it.
    fn generate(&self, prompt: &str, seed_text: &str, n_variants: usize, seed: u64) -> Result<Vec<String>>;
}

fn synonym_table() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut t = BTreeMap::new();
    t.insert("tell", vec!["describe", "explain"]);
    t.insert("about", vec!["regarding", "concerning"]);
    t.insert("explain", vec!["describe", "clarify"]);
    t.insert("good", vec!["great", "fine"]);
    t.insert("quick", vec!["fast", "rapid"]);
    t.insert("help", vec!["assist", "aid"]);
    t.insert("show", vec!["present", "display"]);
    t.insert("use", vec!["apply", "employ"]);
    t.insert("make", vec!["build", "create"]);
    t.insert("start", vec!["begin", "open"]);
    t.insert("doctor", vec!["physician"]);
    t.insert("medicine", vec!["medication"]);
    t.insert("game", vec!["match"]);
    t.insert("code", vec!["program"]);
    t.insert("answer", vec!["reply", "response"]);
    t.insert("question", vec!["query"]);
    t.insert("important", vec!["key", "central"]);
    t.insert("simple", vec!["plain", "basic"]);
    t
}

const FILLERS: &[&str] = &["indeed", "overall", "in short", "to be precise"];

/// Deterministic rule-based paraphraser.
#[derive(Debug, Clone)]
pub struct RuleParaphraser {
    synonyms: BTreeMap<&'static str, Vec<&'static str>>,
}

impl Default for RuleParaphraser {
    fn default() -> Self {
        RuleParaphraser { synonyms: synonym_table() }
    }
}

impl RuleParaphraser {
    fn paraphrase_once(&self, seed_text: &str, rng: &mut Rng) -> String {
        let mut tokens: Vec<String> = seed_text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return String::new();
        }

        // Synonym substitution pass.
        if rng.chance(0.8) {
            for tok in &mut tokens {
                let key = tok.to_lowercase();
                if let Some(alts) = self.synonyms.get(key.as_str()) {
                    if rng.chance(0.5) {
                        *tok = alts[rng.below(alts.len())].to_string();
                    }
                }
            }
        }

        // Token-order rotation (structure variation).
        if tokens.len() > 2 && rng.chance(0.4) {
            let k = 1 + rng.below(tokens.len() - 1);
            tokens.rotate_left(k);
        }

        // Length jitter: truncate or extend, never both. Kept mild so
        // variant scores reflect content rather than sheer length.
        let jitter = rng.next_f64();
        if jitter < 0.2 && tokens.len() > 3 {
            let keep = ((tokens.len() as f64) * 0.75).ceil() as usize;
            tokens.truncate(keep.max(1));
        } else if jitter > 0.75 {
            tokens.push(FILLERS[rng.below(FILLERS.len())].to_string());
        }

        tokens.join(" ")
    }
}

impl GeneratorBackend for RuleParaphraser {
    fn generate(&self, _prompt: &str, seed_text: &str, n_variants: usize, seed: u64) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(n_variants);
        for i in 0..n_variants {
            let mut rng = Rng::new(crate::seed::derive_seed(seed, "variant", &[i as u64]));
            out.push(self.paraphrase_once(seed_text, &mut rng));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let g = RuleParaphraser::default();
        let a = g.generate("p", "the doctor will explain the treatment now", 4, 9).unwrap();
        let b = g.generate("p", "the doctor will explain the treatment now", 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_vary() {
        let g = RuleParaphraser::default();
        let a = g.generate("p", "the doctor will explain the treatment now", 8, 1).unwrap();
        let b = g.generate("p", "the doctor will explain the treatment now", 8, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn variants_are_nonempty_for_nonempty_seed() {
        let g = RuleParaphraser::default();
        for v in g.generate("p", "short text", 6, 5).unwrap() {
            assert!(!v.is_empty());
        }
    }
}
