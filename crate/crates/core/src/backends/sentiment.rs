//! Sentiment polarity classification.
//!
//! The built-in backend scores text with a small polarity lexicon plus
//! negation handling: a negator within the three tokens preceding a polarity
//! word flips that word's contribution. The result is the sign of
//! (positive hits - negative hits), so it is always one of {-1, 0, +1}.

use crate::error::Result;

pub trait SentimentBackend: Send + Sync {
    /// Emotional polarity of the text: -1 negative, 0 neutral, +1 positive.
    fn polarity(&self, text: &str) -> Result<f64>;
}

const POSITIVE_WORDS: &[&str] = &[
    "clear", "great", "good", "thanks", "thank", "helpful", "helps", "helped",
    "perfect", "excellent", "nice", "awesome", "useful", "love", "exactly",
    "wonderful", "brilliant", "answer", "answers", "answered", "works",
    "working", "right", "correct",
];

const NEGATIVE_WORDS: &[&str] = &[
    "wrong", "bad", "useless", "confusing", "unclear", "terrible", "awful",
    "poor", "hate", "incorrect", "irrelevant", "redundant", "repetitive",
    "worse", "broken", "fails", "failed",
];

const NEGATORS: &[&str] = &[
    "not", "no", "never", "nothing", "don't", "doesn't", "didn't", "can't",
    "cannot", "won't", "isn't", "wasn't", "aren't", "couldn't", "wouldn't",
];

/// Window (in tokens) a negator reaches forward over.
const NEGATION_WINDOW: usize = 3;

/// Lowercase word tokens, keeping apostrophes so contractions survive.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn negated(tokens: &[String], pos: usize) -> bool {
    let start = pos.saturating_sub(NEGATION_WINDOW);
    tokens[start..pos].iter().any(|t| NEGATORS.contains(&t.as_str()))
}

/// Built-in lexicon sentiment classifier.
#[derive(Debug, Clone, Default)]
pub struct LexiconSentiment;

impl SentimentBackend for LexiconSentiment {
    fn polarity(&self, text: &str) -> Result<f64> {
        let tokens = word_tokens(text);
        let mut score = 0i64;
        for (i, tok) in tokens.iter().enumerate() {
            let hit = if POSITIVE_WORDS.contains(&tok.as_str()) {
                1
            } else if NEGATIVE_WORDS.contains(&tok.as_str()) {
                -1
            } else {
                continue;
            };
            score += if negated(&tokens, i) { -hit } else { hit };
        }
        Ok(f64::from(score.signum() as i32))
    }
}
