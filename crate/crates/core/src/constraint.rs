//! Physically-inspired weight constraints and satisfaction scoring.
//!
//! Fusion-derived raw weights pass through a fixed four-step pipeline:
//! similarity budget cap, sentiment-modulated similarity penalty, explicit
//! feedback floor, then conditional normalization. The constrained weights
//! multiply the transformed signals; those per-signal contributions feed the
//! nonlinear fusion head, and their plain sum is kept as the interpretable
//! linear score. The step order is load-bearing and pinned by tests.

use serde::{Deserialize, Serialize};

use crate::backends::embed::EmbeddingBackend;
use crate::backends::sentiment::SentimentBackend;
use crate::error::{Error, Result};
use crate::fusion::{self, sigmoid, CredibilityVector, FusionParameters, GateVector};
use crate::signal::{
    self, idx, Interaction, PraiseRules, SignalVector, TransformedSignals, SIGNAL_DIM,
};

/// Constraint pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstraintConfig {
    /// Weight budget reserved for the similarity (redundancy) signal.
    #[serde(default = "default_sim_budget")]
    pub sim_budget: f64,
    /// Budget shared by the other four signals; must complement sim_budget.
    #[serde(default = "default_non_sim_budget")]
    pub non_sim_budget: f64,
    /// Sensitivity of the sentiment-modulated similarity penalty.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Minimum weight of the explicit feedback signal.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// When set, the final score is the clamped linear score instead of the
    /// fusion head output (ablation switch).
    #[serde(default)]
    pub linear_only: bool,
    /// When all non-similarity raw weights collapse to zero, fall back to
    /// uniform raw weights instead of erroring.
    #[serde(default = "default_true")]
    pub fallback_on_degenerate: bool,
}

fn default_sim_budget() -> f64 {
    0.1
}
fn default_non_sim_budget() -> f64 {
    0.9
}
fn default_beta() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            sim_budget: default_sim_budget(),
            non_sim_budget: default_non_sim_budget(),
            beta: default_beta(),
            tau: default_tau(),
            linear_only: false,
            fallback_on_degenerate: true,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.sim_budget + self.non_sim_budget - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "sim_budget and non_sim_budget must sum to 1".into(),
            ));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidInput("beta must be positive".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(Error::InvalidInput("tau must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-signal weights in the fixed index order (fb, dwell, coh, sim, sent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub [f64; SIGNAL_DIM]);

impl WeightVector {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Raw weights from the fusion stage: w_i = g_i * e^{c_i}.
pub fn derive_raw_weights(g: &GateVector, c: &CredibilityVector) -> WeightVector {
    let mut w = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        w[i] = g.0[i] * c.0[i].exp();
    }
    WeightVector(w)
}

/// Budget cap: non-similarity weights are rescaled to share
/// `non_sim_budget` exactly, and the similarity weight is pinned to
/// `sim_budget`. Errors when every non-similarity weight is zero.
pub fn apply_budget(w: &WeightVector, cfg: &ConstraintConfig) -> Result<WeightVector> {
    let sum_ns: f64 = (0..SIGNAL_DIM).filter(|i| *i != idx::SIM).map(|i| w.0[i]).sum();
    if sum_ns <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mut out = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        out[i] = if i == idx::SIM {
            cfg.sim_budget
        } else {
            cfg.non_sim_budget * w.0[i] / sum_ns
        };
    }
    Ok(WeightVector(out))
}

/// Sentiment-modulated similarity penalty: the similarity weight is scaled
/// by sigmoid(-beta * s_sent), so more negative sentiment strengthens the
/// redundancy penalty.
pub fn modulate_similarity(w: &WeightVector, s_sent: f64, cfg: &ConstraintConfig) -> WeightVector {
    let mut out = w.0;
    out[idx::SIM] *= sigmoid(-cfg.beta * s_sent);
    WeightVector(out)
}

/// Explicit-feedback floor: the fb weight never drops below tau.
pub fn enforce_feedback_floor(w: &WeightVector, cfg: &ConstraintConfig) -> WeightVector {
    let mut out = w.0;
    out[idx::FB] = out[idx::FB].max(cfg.tau);
    WeightVector(out)
}

/// Conditional normalization: divide by the sum only when it exceeds 1.
pub fn normalize(w: &WeightVector) -> WeightVector {
    let total = w.sum();
    if total > 1.0 {
        let mut out = w.0;
        for v in &mut out {
            *v /= total;
        }
        WeightVector(out)
    } else {
        *w
    }
}

/// The full constraint pipeline in its fixed order:
/// budget -> sentiment modulation -> feedback floor -> normalize.
pub fn constrain_weights(
    w: &WeightVector,
    s_sent: f64,
    cfg: &ConstraintConfig,
) -> Result<WeightVector> {
    let budgeted = apply_budget(w, cfg)?;
    let modulated = modulate_similarity(&budgeted, s_sent, cfg);
    let floored = enforce_feedback_floor(&modulated, cfg);
    Ok(normalize(&floored))
}

/// Interpretable linear satisfaction score: the weighted sum of transformed
/// signals.
pub fn linear_score(w_hat: &WeightVector, s_tilde: &TransformedSignals) -> f64 {
    w_hat
        .0
        .iter()
        .zip(&s_tilde.values)
        .map(|(w, s)| w * s)
        .sum()
}

/// Everything the scoring pipeline produced for one interaction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FusionState {
    pub signals: TransformedSignals,
    pub gate: GateVector,
    pub credibility: CredibilityVector,
    pub gated_signals: [f64; SIGNAL_DIM],
    pub raw_weights: WeightVector,
    pub constrained_weights: WeightVector,
    pub linear_score: f64,
    pub final_score: f64,
}

/// Score already-transformed signals through gate, credibility, constraints,
/// and the fusion head.
pub fn score_transformed(
    s_tilde: &TransformedSignals,
    params: &FusionParameters,
    cfg: &ConstraintConfig,
) -> Result<FusionState> {
    cfg.validate()?;
    let g = fusion::gate(s_tilde, params)?;
    let c = fusion::credibility(s_tilde, params)?;
    let gated = fusion::gated_signals(&g, s_tilde, &c);
    let mut raw = derive_raw_weights(&g, &c);

    let constrained = match constrain_weights(&raw, s_tilde.sentiment(), cfg) {
        Ok(w) => w,
        Err(Error::DegenerateWeights) if cfg.fallback_on_degenerate => {
            log::warn!("all non-similarity weights zero; falling back to uniform raw weights");
            raw = WeightVector([0.2; SIGNAL_DIM]);
            constrain_weights(&raw, s_tilde.sentiment(), cfg)?
        }
        Err(e) => return Err(e),
    };

    let mut contributions = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        contributions[i] = constrained.0[i] * s_tilde.values[i];
    }
    let linear: f64 = contributions.iter().sum();
    let final_score = if cfg.linear_only {
        linear.clamp(-1.0, 1.0)
    } else {
        fusion::fuse(&contributions, params)?
    };

    Ok(FusionState {
        signals: *s_tilde,
        gate: g,
        credibility: c,
        gated_signals: gated,
        raw_weights: raw,
        constrained_weights: constrained,
        linear_score: linear,
        final_score,
    })
}

/// Score a raw signal vector (applies the dwell transform first).
pub fn score_signals(
    signals: &SignalVector,
    params: &FusionParameters,
    cfg: &ConstraintConfig,
) -> Result<FusionState> {
    score_transformed(&signals.transform(), params, cfg)
}

/// Signal-extraction backends needed by the end-to-end scoring path.
pub struct SignalBackends<'a> {
    pub embedder: &'a dyn EmbeddingBackend,
    pub sentiment: &'a dyn SentimentBackend,
    pub praise: &'a PraiseRules,
}

/// End-to-end satisfaction scoring: extract signals from the interaction,
/// then run the full fusion and constraint pipeline.
pub fn satisfaction_score(
    interaction: &Interaction,
    params: &FusionParameters,
    cfg: &ConstraintConfig,
    backends: &SignalBackends<'_>,
) -> Result<FusionState> {
    let extracted =
        signal::extract_signals(interaction, backends.praise, backends.embedder, backends.sentiment)?;
    score_signals(&extracted.vector, params, cfg)
}
