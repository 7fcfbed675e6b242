//! Two-stage fine-tuning on the toy policy model.
//!
//! Stage one is supervised fine-tuning: plain gradient descent on mean
//! token-level cross-entropy of outputs given instructions. Stage two is
//! weighted direct preference optimization: the per-pair losses
//! -log sigmoid(s(x, y+) - s(x, y-)) are combined under normalized
//! satisfaction-derived weights, which also drive minibatch sampling. Both
//! uses of the frequency weights are independently switchable.
//!
//! The analytic wDPO gradient is audited against central finite differences
//! by the `gradcheck` harness, which the CLI exposes directly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::{PreferencePair, SftExample};
use crate::policy::{PolicyModel, Stage, TokenId};
use crate::seed::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Context rows whose parameters are never updated.
    #[serde(default)]
    pub frozen_rows: BTreeSet<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            batch_size: 32,
            max_epochs: 20,
            frozen_rows: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput("learning_rate must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if let Some(row) = self.frozen_rows.iter().find(|r| **r > vocab_size) {
            return Err(Error::InvalidInput(format!(
                "frozen row {row} outside context rows 0..={vocab_size}"
            )));
        }
        Ok(())
    }
}

/// Switches for the two uses of frequency weights in preference training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoOptions {
    /// Draw minibatch pairs with probability proportional to weight.
    pub weighted_sampling: bool,
    /// Scale per-pair loss terms by normalized weights.
    pub weighted_loss: bool,
    /// Accept a model that has not been through the SFT stage.
    pub allow_unstaged: bool,
    /// Extension, off by default: anchor margins to the starting model,
    /// margin = (s(y+) - s_ref(y+)) - (s(y-) - s_ref(y-)), with the input
    /// model frozen as the reference. The plain loss uses raw score
    /// differences only.
    pub reference_anchored: bool,
}

impl Default for DpoOptions {
    fn default() -> Self {
        DpoOptions {
            weighted_sampling: true,
            weighted_loss: true,
            allow_unstaged: false,
            reference_anchored: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub model: PolicyModel,
    /// Full-dataset mean cross-entropy; entry 0 is the pre-training loss.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DpoOutcome {
    pub model: PolicyModel,
    /// Full-dataset wDPO loss per epoch; entry 0 is pre-training.
    pub loss_curve: Vec<f64>,
    /// Mean score margin per epoch; entry 0 is pre-training.
    pub margin_curve: Vec<f64>,
}

fn tokenized_examples(model: &PolicyModel, dataset: &[SftExample]) -> Vec<Vec<(usize, TokenId)>> {
    dataset
        .iter()
        .map(|ex| model.transitions(&model.encode(&ex.instruction), &model.encode(&ex.output)))
        .collect()
}

fn mean_cross_entropy(model: &PolicyModel, examples: &[Vec<(usize, TokenId)>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for transitions in examples {
        for &(ctx, tok) in transitions {
            total -= model.log_probs(ctx)[tok];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Accumulate the mean-CE gradient of a set of transitions into `grad`.
fn accumulate_ce_gradient(
    model: &PolicyModel,
    transitions: &[(usize, TokenId)],
    grad: &mut [f64],
) {
    let v = model.vocab_size();
    // Group by context row: grad_row = n_ctx * p - counts.
    let mut row_totals: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    for &(ctx, tok) in transitions {
        let counts = row_totals.entry(ctx).or_insert_with(|| vec![0.0; v]);
        counts[tok] += 1.0;
    }
    let t = transitions.len() as f64;
    for (ctx, counts) in row_totals {
        let n_ctx: f64 = counts.iter().sum();
        let p = model.probs(ctx);
        for i in 0..v {
            grad[ctx * v + i] += (n_ctx * p[i] - counts[i]) / t;
        }
    }
}

fn apply_gradient(model: &mut PolicyModel, grad: &[f64], lr: f64, frozen: &BTreeSet<usize>) {
    let v = model.vocab_size();
    for ctx in 0..=v {
        if frozen.contains(&ctx) {
            continue;
        }
        for i in 0..v {
            model.theta[ctx * v + i] -= lr * grad[ctx * v + i];
        }
    }
}

/// Supervised fine-tuning by gradient descent on mean token-level
/// cross-entropy. Deterministic given `cfg.seed`; full-batch when
/// `batch_size >= dataset.len()`, in which case the training loss is
/// non-increasing. Zero epochs returns the model unchanged apart from
/// staging metadata.
pub fn sft_train(model: &PolicyModel, dataset: &[SftExample], cfg: &TrainingConfig) -> Result<SftOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty SFT dataset".into()));
    }
    cfg.validate(model.vocab_size())?;
    let mut model = model.clone();
    let examples = tokenized_examples(&model, dataset);
    let n_params = model.theta.len();

    let mut loss_curve = vec![mean_cross_entropy(&model, &examples)];
    let mut rng = Rng::new(derive_seed(cfg.seed, "sft", &[]));
    let full_batch = cfg.batch_size >= dataset.len();

    for _epoch in 0..cfg.max_epochs {
        if full_batch {
            let all: Vec<(usize, TokenId)> = examples.iter().flatten().copied().collect();
            let mut grad = vec![0.0; n_params];
            accumulate_ce_gradient(&model, &all, &mut grad);
            apply_gradient(&mut model, &grad, cfg.learning_rate, &cfg.frozen_rows);
        } else {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(usize, TokenId)> = chunk
                    .iter()
                    .flat_map(|&i| examples[i].iter().copied())
                    .collect();
                if batch.is_empty() {
                    continue;
                }
                let mut grad = vec![0.0; n_params];
                accumulate_ce_gradient(&model, &batch, &mut grad);
                apply_gradient(&mut model, &grad, cfg.learning_rate, &cfg.frozen_rows);
            }
        }
        let loss = mean_cross_entropy(&model, &examples);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite SFT loss at epoch {_epoch}")));
        }
        loss_curve.push(loss);
        debug_assert!(model.distribution_is_proper(1e-9));
    }

    model.version += 1;
    model.stage = Stage::Sft;
    model.config_used = Some(cfg.clone());
    Ok(SftOutcome { model, loss_curve })
}

struct TokenizedPair {
    x: Vec<TokenId>,
    chosen: Vec<TokenId>,
    rejected: Vec<TokenId>,
    weight: f64,
}

fn tokenize_pairs(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<Vec<TokenizedPair>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty preference pair set".into()));
    }
    if pairs.iter().any(|p| p.weight <= 0.0 || !p.weight.is_finite()) {
        return Err(Error::InvalidInput("pair weights must be positive".into()));
    }
    Ok(pairs
        .iter()
        .map(|p| TokenizedPair {
            x: model.encode(&p.prompt),
            chosen: model.encode(&p.chosen),
            rejected: model.encode(&p.rejected),
            weight: p.weight,
        })
        .collect())
}

fn log_sigmoid(x: f64) -> f64 {
    // ln sigmoid(x) = -softplus(-x), stable in both tails.
    if x >= 0.0 {
        -((-x).exp()).ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pair_margin(model: &PolicyModel, p: &TokenizedPair) -> Result<f64> {
    Ok(model.score_sequence(&p.x, &p.chosen)? - model.score_sequence(&p.x, &p.rejected)?)
}

fn wdpo_loss_tokenized(model: &PolicyModel, pairs: &[TokenizedPair], weighted: bool) -> Result<f64> {
    let total_w: f64 = if weighted {
        pairs.iter().map(|p| p.weight).sum()
    } else {
        pairs.len() as f64
    };
    let mut loss = 0.0;
    for p in pairs {
        let w = if weighted { p.weight } else { 1.0 };
        loss -= w / total_w * log_sigmoid(pair_margin(model, p)?);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite wDPO loss".into()));
    }
    Ok(loss)
}

/// Weighted DPO loss:
/// L = -sum_i (w_i / sum_j w_j) * log sigmoid(s(x_i, y_i+) - s(x_i, y_i-)).
///
/// Invariant under any positive rescaling of the weights.
pub fn wdpo_loss(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<f64> {
    let tokenized = tokenize_pairs(model, pairs)?;
    wdpo_loss_tokenized(model, &tokenized, true)
}

/// Accumulate grad of s(x, y) w.r.t. theta, scaled by `coef`:
/// d s / d theta[ctx][v] = sum over transitions with that context of
/// (1{v = next} - p_v(ctx)).
fn accumulate_score_gradient(
    model: &PolicyModel,
    x: &[TokenId],
    y: &[TokenId],
    coef: f64,
    grad: &mut [f64],
) {
    let v = model.vocab_size();
    let mut row_counts: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    for (ctx, tok) in model.transitions(x, y) {
        let counts = row_counts.entry(ctx).or_insert_with(|| vec![0.0; v]);
        counts[tok] += 1.0;
    }
    for (ctx, counts) in row_counts {
        let n_ctx: f64 = counts.iter().sum();
        let p = model.probs(ctx);
        for i in 0..v {
            grad[ctx * v + i] += coef * (counts[i] - n_ctx * p[i]);
        }
    }
}

fn wdpo_gradient_tokenized(
    model: &PolicyModel,
    pairs: &[TokenizedPair],
    weighted: bool,
) -> Result<Vec<f64>> {
    let total_w: f64 = if weighted {
        pairs.iter().map(|p| p.weight).sum()
    } else {
        pairs.len() as f64
    };
    let mut grad = vec![0.0; model.theta.len()];
    for p in pairs {
        let w = if weighted { p.weight } else { 1.0 };
        let margin = pair_margin(model, p)?;
        // d/d theta of -log sigmoid(margin) = -sigmoid(-margin) * d margin.
        let coef = -(w / total_w) * sigmoid(-margin);
        accumulate_score_gradient(model, &p.x, &p.chosen, coef, &mut grad);
        accumulate_score_gradient(model, &p.x, &p.rejected, -coef, &mut grad);
    }
    Ok(grad)
}

/// Analytic gradient of [`wdpo_loss`] with respect to theta.
pub fn wdpo_gradient(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<Vec<f64>> {
    let tokenized = tokenize_pairs(model, pairs)?;
    wdpo_gradient_tokenized(model, &tokenized, true)
}

/// Mean score margin E[s(x, y+) - s(x, y-)] over the pair set.
pub fn mean_margin(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<f64> {
    let tokenized = tokenize_pairs(model, pairs)?;
    let mut total = 0.0;
    for p in &tokenized {
        total += pair_margin(model, p)?;
    }
    Ok(total / tokenized.len() as f64)
}

/// Preference optimization with frequency weights used two ways: weighted
/// minibatch sampling and weighted loss terms (each switchable in `opts`).
///
/// Refuses models that skipped the SFT stage unless `opts.allow_unstaged`.
pub fn dpo_train(
    model: &PolicyModel,
    pairs: &[PreferencePair],
    cfg: &TrainingConfig,
    opts: &DpoOptions,
) -> Result<DpoOutcome> {
    if model.stage == Stage::Init && !opts.allow_unstaged {
        return Err(Error::StageOrder(
            "model has not been through SFT; preference-only optimization requires allow_unstaged".into(),
        ));
    }
    cfg.validate(model.vocab_size())?;
    let mut model = model.clone();
    let tokenized = tokenize_pairs(&model, pairs)?;

    // Normalize weights once; everything downstream is then exactly
    // invariant under rescaling of the input weights.
    let total_w: f64 = tokenized.iter().map(|p| p.weight).sum();
    let norm_weights: Vec<f64> = tokenized.iter().map(|p| p.weight / total_w).collect();

    let mut loss_curve = vec![wdpo_loss_tokenized(&model, &tokenized, true)?];
    let mut margin_curve = vec![{
        let mut m = 0.0;
        for p in &tokenized {
            m += pair_margin(&model, p)?;
        }
        m / tokenized.len() as f64
    }];

    let mut rng = Rng::new(derive_seed(cfg.seed, "dpo", &[]));
    let steps_per_epoch = tokenized.len().div_ceil(cfg.batch_size);

    for _epoch in 0..cfg.max_epochs {
        let mut uniform_order: Vec<usize> = (0..tokenized.len()).collect();
        if !opts.weighted_sampling {
            rng.shuffle(&mut uniform_order);
        }
        for step in 0..steps_per_epoch {
            let batch_ids: Vec<usize> = if opts.weighted_sampling {
                (0..cfg.batch_size.min(tokenized.len()))
                    .map(|_| rng.weighted_index(&norm_weights))
                    .collect()
            } else {
                uniform_order
                    .iter()
                    .copied()
                    .cycle()
                    .skip(step * cfg.batch_size)
                    .take(cfg.batch_size.min(tokenized.len()))
                    .collect()
            };
            let batch: Vec<&TokenizedPair> = batch_ids.iter().map(|&i| &tokenized[i]).collect();
            let batch_total: f64 = if opts.weighted_loss {
                batch_ids.iter().map(|&i| norm_weights[i]).sum()
            } else {
                batch.len() as f64
            };
            let mut grad = vec![0.0; model.theta.len()];
            for (&i, p) in batch_ids.iter().zip(&batch) {
                let w = if opts.weighted_loss { norm_weights[i] } else { 1.0 };
                let margin = pair_margin(&model, p)?;
                let coef = -(w / batch_total) * sigmoid(-margin);
                accumulate_score_gradient(&model, &p.x, &p.chosen, coef, &mut grad);
                accumulate_score_gradient(&model, &p.x, &p.rejected, -coef, &mut grad);
            }
            apply_gradient(&mut model, &grad, cfg.learning_rate, &cfg.frozen_rows);
        }
        let loss = wdpo_loss_tokenized(&model, &tokenized, true)?;
        loss_curve.push(loss);
        let mut m = 0.0;
        for p in &tokenized {
            m += pair_margin(&model, p)?;
        }
        margin_curve.push(m / tokenized.len() as f64);
        debug_assert!(model.distribution_is_proper(1e-9));
    }

    model.version += 1;
    model.stage = Stage::Dpo;
    model.config_used = Some(cfg.clone());
    Ok(DpoOutcome { model, loss_curve, margin_curve })
}

// ---------------------------------------------------------------------------
// Auto-configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ResourceBudget {
    pub memory_mb: usize,
    pub workers: usize,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        ResourceBudget { memory_mb: 1024, workers: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetStats {
    pub n_examples: usize,
    pub vocab_size: usize,
    /// Per-token corpus frequencies; consulted only above the freeze
    /// threshold to pick the rarest rows.
    #[serde(default)]
    pub token_frequencies: Option<Vec<u64>>,
}

/// Base learning rate for the log-linear policy; scaled by batch size in
/// [`auto_config`].
pub const BASE_LR: f64 = 0.1;

/// Vocabulary size at which rare-token rows get frozen.
pub const FREEZE_VOCAB_THRESHOLD: usize = 200;

/// Assumed working memory per concurrent example, in MB.
const MB_PER_EXAMPLE: usize = 4;

/// Deterministic training-parameter heuristic:
///
/// * batch_size = clamp(n_examples / 10, 1, memory_mb / 4)
/// * learning_rate = BASE_LR * sqrt(32 / batch_size)
/// * max_epochs = clamp(1024 / n_examples, 4, 64), decreasing in n
/// * frozen_rows: empty below the vocab threshold, else the rarest 5% of
///   token rows by corpus frequency.
pub fn auto_config(budget: &ResourceBudget, stats: &DatasetStats) -> TrainingConfig {
    let mem_cap = (budget.memory_mb / MB_PER_EXAMPLE).max(1);
    let batch_size = (stats.n_examples / 10).clamp(1, mem_cap);
    let learning_rate = BASE_LR * (32.0 / batch_size as f64).sqrt();
    let max_epochs = (1024 / stats.n_examples.max(1)).clamp(4, 64);
    let mut frozen_rows = BTreeSet::new();
    if stats.vocab_size >= FREEZE_VOCAB_THRESHOLD {
        if let Some(freqs) = &stats.token_frequencies {
            let mut order: Vec<usize> = (0..freqs.len()).collect();
            order.sort_by_key(|&i| (freqs[i], i));
            let n_freeze = (freqs.len() / 20).max(1);
            frozen_rows.extend(order.into_iter().take(n_freeze));
        }
    }
    let cfg = TrainingConfig {
        learning_rate,
        batch_size,
        max_epochs,
        frozen_rows,
        seed: 0,
    };
    log::info!(
        "auto_config: n={} vocab={} memory_mb={} workers={} -> batch={} lr={:.4} epochs={} frozen={}",
        stats.n_examples,
        stats.vocab_size,
        budget.memory_mb,
        budget.workers,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.max_epochs,
        cfg.frozen_rows.len()
    );
    cfg
}

// ---------------------------------------------------------------------------
// Gradient check harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Fault injection: adds eps * sum(theta^2) to the finite-difference
    /// loss only, so a correct analytic gradient must disagree.
    pub perturb_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstCase {
    pub trial: usize,
    pub param_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub worst: Option<WorstCase>,
}

/// Relative-error tolerance of the gradient audit.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const PARAMS_PER_TRIAL: usize = 20;

fn random_instance(seed: u64) -> (PolicyModel, Vec<PreferencePair>) {
    let mut rng = Rng::new(seed);
    let vocab_size = 4 + rng.below(5); // 4..=8 including unk
    let tokens: Vec<String> = (1..vocab_size).map(|i| format!("t{i}")).collect();
    let corpus = tokens.join(" ");
    let mut model = PolicyModel::from_corpus(std::iter::once(corpus.as_str())).unwrap();
    for v in &mut model.theta {
        *v = rng.uniform(-1.0, 1.0);
    }
    let seq = |rng: &mut Rng, lo: usize, hi: usize| -> String {
        let len = lo + rng.below(hi - lo + 1);
        (0..len)
            .map(|_| format!("t{}", 1 + rng.below(vocab_size - 1)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let n_pairs = 2 + rng.below(4);
    let pairs: Vec<PreferencePair> = (0..n_pairs)
        .map(|_| PreferencePair {
            prompt: seq(&mut rng, 1, 3),
            chosen: seq(&mut rng, 1, 4),
            rejected: seq(&mut rng, 1, 4),
            weight: (1
                + rng.below(5)) as f64,
        })
        .collect();
    (model, pairs)
}

/// Compare the analytic wDPO gradient against central finite differences on
/// random instances. Returns the worst relative error seen and the instance
/// that produced it, for replay.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("gradcheck requires at least one trial".into()));
    }
    let mut max_rel_err = 0.0f64;
    let mut worst: Option<WorstCase> = None;

    for trial in 0..cfg.trials {
        let instance_seed = derive_seed(cfg.seed, "gradcheck", &[trial as u64]);
        let (model, pairs) = random_instance(instance_seed);
        let analytic = wdpo_gradient(&model, &pairs)?;

        let loss_at = |theta: &[f64]| -> Result<f64> {
            let mut m = model.clone();
            m.theta.copy_from_slice(theta);
            let mut loss = wdpo_loss(&m, &pairs)?;
            if let Some(eps) = cfg.perturb_loss {
                loss += eps * theta.iter().map(|t| t * t).sum::<f64>();
            }
            Ok(loss)
        };

        let mut rng = Rng::new(derive_seed(instance_seed, "param_pick", &[]));
        let n = model.theta.len();
        for _ in 0..PARAMS_PER_TRIAL {
            let i = rng.below(n);
            let mut plus = model.theta.clone();
            plus[i] += FD_STEP;
            let mut minus = model.theta.clone();
            minus[i] -= FD_STEP;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * FD_STEP);
            let abs_diff = (analytic[i] - numeric).abs();
            if abs_diff < 1e-9 {
                // Agreement at the finite-difference noise floor.
                continue;
            }
            let rel = abs_diff / analytic[i].abs().max(numeric.abs()).max(1e-4);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some(WorstCase {
                    trial,
                    param_index: i,
                    analytic: analytic[i],
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }

    Ok(GradCheckReport {
        trials: cfg.trials,
        max_rel_err,
        tolerance: GRADCHECK_TOLERANCE,
        passed: max_rel_err < GRADCHECK_TOLERANCE,
        worst,
    })
}
