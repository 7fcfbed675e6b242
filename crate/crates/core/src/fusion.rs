//! Credibility-aware gated fusion.
//!
//! Three small MLPs (one hidden tanh layer each) drive satisfaction scoring:
//! a gate network with sigmoid outputs, a credibility network with softmax
//! outputs, and a fusion head with a single tanh output. Parameters
//! initialize uniformly in [-0.5, 0.5] from seeds derived per network, so a
//! `(seed, hidden_width)` pair always names the same untrained model.
//!
//! `calibrate` fits all three networks end to end (through the constraint
//! pipeline) by full-batch gradient descent on mean squared error; the
//! backward pass is analytic and checked against finite differences in the
//! test suite.

use serde::{Deserialize, Serialize};

use crate::constraint::{self, ConstraintConfig};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, Rng};
use crate::signal::{idx, SignalVector, TransformedSignals, SIGNAL_DIM};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// One-hidden-layer perceptron with tanh hidden activation. The output
/// nonlinearity is applied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// hidden x in_dim, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// out_dim x hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn seeded(in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.next_f64() - 0.5).collect()
        };
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: draw(hidden * in_dim),
            b1: draw(hidden),
            w2: draw(out_dim * hidden),
            b2: draw(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    /// Forward pass caching intermediates for backprop.
    /// Returns (hidden pre-activation, hidden activation, output pre-activation).
    pub fn forward_trace(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut a1 = self.b1.clone();
        for h in 0..self.hidden {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            a1[h] += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let h1: Vec<f64> = a1.iter().map(|a| a.tanh()).collect();
        let mut z = self.b2.clone();
        for o in 0..self.out_dim {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            z[o] += row.iter().zip(&h1).map(|(w, hi)| w * hi).sum::<f64>();
        }
        (a1, h1, z)
    }

    /// Output pre-activations only.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).2
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// Flat parameter layout: w1, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn from_flat(in_dim: usize, hidden: usize, out_dim: usize, flat: &[f64]) -> Result<Self> {
        let expected = hidden * in_dim + hidden + out_dim * hidden + out_dim;
        if flat.len() != expected {
            return Err(Error::InvalidInput(format!(
                "flat parameter array has {} values, expected {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = flat[at..at + n].to_vec();
            at += n;
            s
        };
        Ok(Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: take(hidden * in_dim),
            b1: take(hidden),
            w2: take(out_dim * hidden),
            b2: take(out_dim),
        })
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Per-signal soft activations, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateVector(pub [f64; SIGNAL_DIM]);

/// Per-signal reliability weights on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibilityVector(pub [f64; SIGNAL_DIM]);

/// Parameters of the three fusion networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParameters {
    pub gate_net: Mlp,
    pub credibility_net: Mlp,
    pub fusion_net: Mlp,
    pub hidden_width: usize,
    pub seed: u64,
}

impl FusionParameters {
    /// Fresh untrained parameters, reproducible from (seed, hidden_width).
    pub fn seeded(hidden_width: usize, seed: u64) -> Self {
        FusionParameters {
            gate_net: Mlp::seeded(SIGNAL_DIM, hidden_width, SIGNAL_DIM, derive_seed(seed, "gate_net", &[])),
            credibility_net: Mlp::seeded(
                SIGNAL_DIM,
                hidden_width,
                SIGNAL_DIM,
                derive_seed(seed, "credibility_net", &[]),
            ),
            fusion_net: Mlp::seeded(SIGNAL_DIM, hidden_width, 1, derive_seed(seed, "fusion_net", &[])),
            hidden_width,
            seed,
        }
    }

    /// All-zero networks (useful for the fixed-point checks in tests).
    pub fn zeroed(hidden_width: usize) -> Self {
        FusionParameters {
            gate_net: Mlp::zeros(SIGNAL_DIM, hidden_width, SIGNAL_DIM),
            credibility_net: Mlp::zeros(SIGNAL_DIM, hidden_width, SIGNAL_DIM),
            fusion_net: Mlp::zeros(SIGNAL_DIM, hidden_width, 1),
            hidden_width,
            seed: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gate_net.is_finite() && self.credibility_net.is_finite() && self.fusion_net.is_finite()
    }

    /// The calibrated checkpoint shipped with the crate; all acceptance
    /// checks score against it.
    pub fn reference() -> Self {
        let json = include_str!("../assets/reference_checkpoint.json");
        Self::from_checkpoint_json(json).expect("bundled checkpoint is valid")
    }

    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            hidden_width: self.hidden_width,
            seed: self.seed,
            gate_net: self.gate_net.to_flat(),
            credibility_net: self.credibility_net.to_flat(),
            fusion_net: self.fusion_net.to_flat(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(json)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let h = file.hidden_width;
        Ok(FusionParameters {
            gate_net: Mlp::from_flat(SIGNAL_DIM, h, SIGNAL_DIM, &file.gate_net)?,
            credibility_net: Mlp::from_flat(SIGNAL_DIM, h, SIGNAL_DIM, &file.credibility_net)?,
            fusion_net: Mlp::from_flat(SIGNAL_DIM, h, 1, &file.fusion_net)?,
            hidden_width: h,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    hidden_width: usize,
    seed: u64,
    gate_net: Vec<f64>,
    credibility_net: Vec<f64>,
    fusion_net: Vec<f64>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what}")));
    }
    Ok(())
}

/// Gate network forward pass; every component lands in [0, 1].
pub fn gate(signals: &TransformedSignals, params: &FusionParameters) -> Result<GateVector> {
    if !params.gate_net.is_finite() {
        return Err(Error::Numeric("gate net has non-finite parameters".into()));
    }
    let z = params.gate_net.forward(&signals.values);
    check_finite(&z, "gate activations")?;
    let mut g = [0.0; SIGNAL_DIM];
    for (gi, zi) in g.iter_mut().zip(&z) {
        *gi = sigmoid(*zi);
    }
    Ok(GateVector(g))
}

/// Credibility network forward pass; the output lies on the simplex.
pub fn credibility(signals: &TransformedSignals, params: &FusionParameters) -> Result<CredibilityVector> {
    if !params.credibility_net.is_finite() {
        return Err(Error::Numeric("credibility net has non-finite parameters".into()));
    }
    let z = params.credibility_net.forward(&signals.values);
    check_finite(&z, "credibility activations")?;
    let sm = softmax(&z);
    let mut c = [0.0; SIGNAL_DIM];
    c.copy_from_slice(&sm);
    Ok(CredibilityVector(c))
}

/// Gated, trust-weighted signals: G (.) S (.) e^C, elementwise.
pub fn gated_signals(
    g: &GateVector,
    s: &TransformedSignals,
    c: &CredibilityVector,
) -> [f64; SIGNAL_DIM] {
    let mut out = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        out[i] = g.0[i] * s.values[i] * c.0[i].exp();
    }
    out
}

/// Fusion head: tanh of the network output, always in (-1, 1).
pub fn fuse(weighted_signals: &[f64; SIGNAL_DIM], params: &FusionParameters) -> Result<f64> {
    check_finite(weighted_signals, "fusion input")?;
    if !params.fusion_net.is_finite() {
        return Err(Error::Numeric("fusion net has non-finite parameters".into()));
    }
    let z = params.fusion_net.forward(weighted_signals);
    check_finite(&z, "fusion activation")?;
    Ok(z[0].tanh())
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// One calibration point: raw signals and the target satisfaction score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationExample {
    pub signals: SignalVector,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Stop once mean squared error drops below this.
    pub tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            learning_rate: 0.05,
            momentum: 0.9,
            max_epochs: 30_000,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub final_mse: f64,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Clone)]
struct MlpGrad {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl MlpGrad {
    fn zeros_like(m: &Mlp) -> Self {
        MlpGrad {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }
}

/// Backprop through one MLP given d(loss)/d(output pre-activation).
/// Accumulates parameter gradients and returns d(loss)/d(input).
fn mlp_backward(m: &Mlp, x: &[f64], a1: &[f64], h1: &[f64], dz: &[f64], grad: &mut MlpGrad) -> Vec<f64> {
    // Output layer.
    for o in 0..m.out_dim {
        grad.b2[o] += dz[o];
        for h in 0..m.hidden {
            grad.w2[o * m.hidden + h] += dz[o] * h1[h];
        }
    }
    // Hidden layer.
    let mut dh = vec![0.0; m.hidden];
    for h in 0..m.hidden {
        let mut acc = 0.0;
        for o in 0..m.out_dim {
            acc += dz[o] * m.w2[o * m.hidden + h];
        }
        dh[h] = acc * (1.0 - a1[h].tanh().powi(2));
    }
    for h in 0..m.hidden {
        grad.b1[h] += dh[h];
        for i in 0..m.in_dim {
            grad.w1[h * m.in_dim + i] += dh[h] * x[i];
        }
    }
    // Input gradient.
    let mut dx = vec![0.0; m.in_dim];
    for i in 0..m.in_dim {
        let mut acc = 0.0;
        for h in 0..m.hidden {
            acc += dh[h] * m.w1[h * m.in_dim + i];
        }
        dx[i] = acc;
    }
    dx
}

/// Full end-to-end gradient of 0.5-less squared error d = (y - t) for one
/// example, pushed back through the tanh head, the constraint pipeline, and
/// both front networks. Returns the predicted score.
#[allow(clippy::too_many_arguments)]
fn backward_example(
    params: &NetView<'_>,
    s_tilde: &TransformedSignals,
    cfg: &ConstraintConfig,
    target: f64,
    scale: f64,
    g_grad: &mut MlpGrad,
    c_grad: &mut MlpGrad,
    f_grad: &mut MlpGrad,
) -> Result<f64> {
    let x = &s_tilde.values;

    // Forward with caches.
    let (ga1, gh1, gz) = params.gate.forward_trace(x);
    let g: Vec<f64> = gz.iter().map(|z| sigmoid(*z)).collect();
    let (ca1, ch1, cz) = params.credibility.forward_trace(x);
    let c = softmax(&cz);

    let mut w = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        w[i] = g[i] * c[i].exp();
    }

    let sum_ns: f64 = (0..SIGNAL_DIM).filter(|i| *i != idx::SIM).map(|i| w[i]).sum();
    let degenerate = sum_ns <= 0.0;
    let mut w_tilde = [0.0; SIGNAL_DIM];
    if degenerate {
        // Uniform fallback carries no parameter gradient.
        w_tilde = [0.2; SIGNAL_DIM];
    } else {
        for i in 0..SIGNAL_DIM {
            w_tilde[i] = if i == idx::SIM {
                cfg.sim_budget
            } else {
                cfg.non_sim_budget * w[i] / sum_ns
            };
        }
    }
    let sim_mult = sigmoid(-cfg.beta * s_tilde.sentiment());
    w_tilde[idx::SIM] *= sim_mult;
    let fb_pre_floor = w_tilde[idx::FB];
    let floor_active = fb_pre_floor < cfg.tau;
    if floor_active {
        w_tilde[idx::FB] = cfg.tau;
    }
    let t_sum: f64 = w_tilde.iter().sum();
    let renorm = t_sum > 1.0;
    let mut w_hat = w_tilde;
    if renorm {
        for v in &mut w_hat {
            *v /= t_sum;
        }
    }
    let mut v = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        v[i] = w_hat[i] * x[i];
    }
    let (fa1, fh1, fz) = params.fusion.forward_trace(&v);
    let y = fz[0].tanh();

    // Backward. Loss contribution: scale * (y - target)^2.
    let dy = scale * 2.0 * (y - target);
    let dzf = dy * (1.0 - y * y);
    let dv = mlp_backward(params.fusion, &v, &fa1, &fh1, &[dzf], f_grad);

    let mut d_w_hat = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        d_w_hat[i] = dv[i] * x[i];
    }
    let mut d_w_tilde = [0.0; SIGNAL_DIM];
    if renorm {
        let dot: f64 = (0..SIGNAL_DIM).map(|i| d_w_hat[i] * w_tilde[i]).sum();
        for i in 0..SIGNAL_DIM {
            d_w_tilde[i] = d_w_hat[i] / t_sum - dot / (t_sum * t_sum);
        }
    } else {
        d_w_tilde = d_w_hat;
    }
    if floor_active {
        d_w_tilde[idx::FB] = 0.0;
    }
    // The sim weight is a constant (budget * sentiment multiplier) with
    // respect to the networks, so nothing flows back through it.
    let mut dw = [0.0; SIGNAL_DIM];
    if !degenerate {
        let dot_ns: f64 = (0..SIGNAL_DIM)
            .filter(|i| *i != idx::SIM)
            .map(|i| d_w_tilde[i] * w[i])
            .sum();
        for k in 0..SIGNAL_DIM {
            if k == idx::SIM {
                continue;
            }
            dw[k] = cfg.non_sim_budget * d_w_tilde[k] / sum_ns
                - cfg.non_sim_budget * dot_ns / (sum_ns * sum_ns);
        }
    }

    // w_i = g_i * e^{c_i}.
    let mut dg = [0.0; SIGNAL_DIM];
    let mut dc = [0.0; SIGNAL_DIM];
    for i in 0..SIGNAL_DIM {
        dg[i] = dw[i] * c[i].exp();
        dc[i] = dw[i] * w[i];
    }

    // Sigmoid and softmax Jacobians, then into the front networks.
    let dzg: Vec<f64> = (0..SIGNAL_DIM).map(|i| dg[i] * g[i] * (1.0 - g[i])).collect();
    mlp_backward(params.gate, x, &ga1, &gh1, &dzg, g_grad);
    let dot_c: f64 = (0..SIGNAL_DIM).map(|i| dc[i] * c[i]).sum();
    let dzc: Vec<f64> = (0..SIGNAL_DIM).map(|i| c[i] * (dc[i] - dot_c)).collect();
    mlp_backward(params.credibility, x, &ca1, &ch1, &dzc, c_grad);

    if !y.is_finite() {
        return Err(Error::Numeric("non-finite score during calibration".into()));
    }
    Ok(y)
}

/// Borrowed view used by the backward pass.
struct NetView<'a> {
    gate: &'a Mlp,
    credibility: &'a Mlp,
    fusion: &'a Mlp,
}

fn apply_update(m: &mut Mlp, grad: &MlpGrad, vel: &mut MlpGrad, lr: f64, momentum: f64) {
    let step = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
        for i in 0..p.len() {
            v[i] = momentum * v[i] - lr * g[i];
            p[i] += v[i];
        }
    };
    step(&mut m.w1, &grad.w1, &mut vel.w1);
    step(&mut m.b1, &grad.b1, &mut vel.b1);
    step(&mut m.w2, &grad.w2, &mut vel.w2);
    step(&mut m.b2, &grad.b2, &mut vel.b2);
}

/// End-to-end mean squared error of the satisfaction pipeline on a
/// calibration set.
pub fn calibration_mse(
    params: &FusionParameters,
    set: &[CalibrationExample],
    cfg: &ConstraintConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in set {
        let state = constraint::score_signals(&ex.signals, params, cfg)?;
        total += (state.final_score - ex.target).powi(2);
    }
    Ok(total / set.len() as f64)
}

/// Fit the fusion parameters to a calibration set by gradient descent on the
/// end-to-end satisfaction score. Deterministic; re-running with the same
/// inputs reproduces the same parameters bit for bit.
///
/// If the tolerance is not reached within `max_epochs`, the best parameters
/// seen are returned along with a non-converged report.
pub fn calibrate(
    params: &FusionParameters,
    set: &[CalibrationExample],
    cfg: &ConstraintConfig,
    opts: &CalibrationOptions,
) -> Result<(FusionParameters, CalibrationReport)> {
    if set.is_empty() {
        return Err(Error::InvalidInput("empty calibration set".into()));
    }
    for ex in set {
        if !(-1.0..=1.0).contains(&ex.target) {
            return Err(Error::InvalidInput(format!("target {} outside [-1, 1]", ex.target)));
        }
    }
    let transformed: Vec<TransformedSignals> = set.iter().map(|ex| ex.signals.transform()).collect();

    let mut current = params.clone();
    let mut vel_g = MlpGrad::zeros_like(&current.gate_net);
    let mut vel_c = MlpGrad::zeros_like(&current.credibility_net);
    let mut vel_f = MlpGrad::zeros_like(&current.fusion_net);

    let mut best = current.clone();
    let mut best_mse = f64::INFINITY;
    let scale = 1.0 / set.len() as f64;
    let mut epochs = 0;

    for epoch in 0..opts.max_epochs {
        let mut g_grad = MlpGrad::zeros_like(&current.gate_net);
        let mut c_grad = MlpGrad::zeros_like(&current.credibility_net);
        let mut f_grad = MlpGrad::zeros_like(&current.fusion_net);
        let view = NetView {
            gate: &current.gate_net,
            credibility: &current.credibility_net,
            fusion: &current.fusion_net,
        };
        let mut mse = 0.0;
        for (ex, st) in set.iter().zip(&transformed) {
            let y = backward_example(
                &view, st, cfg, ex.target, scale, &mut g_grad, &mut c_grad, &mut f_grad,
            )?;
            mse += scale * (y - ex.target).powi(2);
        }
        epochs = epoch + 1;
        if mse < best_mse {
            best_mse = mse;
            best = current.clone();
        }
        if mse < opts.tolerance {
            return Ok((
                current,
                CalibrationReport { final_mse: mse, epochs, converged: true },
            ));
        }
        apply_update(&mut current.gate_net, &g_grad, &mut vel_g, opts.learning_rate, opts.momentum);
        apply_update(&mut current.credibility_net, &c_grad, &mut vel_c, opts.learning_rate, opts.momentum);
        apply_update(&mut current.fusion_net, &f_grad, &mut vel_f, opts.learning_rate, opts.momentum);
        if !current.is_finite() {
            return Err(Error::Numeric("calibration diverged to non-finite parameters".into()));
        }
    }

    let final_mse = calibration_mse(&best, set, cfg)?;
    log::warn!("calibration stopped at mse {final_mse:.3e} after {epochs} epochs without reaching tolerance");
    Ok((best, CalibrationReport { final_mse, epochs, converged: false }))
}

/// The bundled calibration set: the four scoring archetypes plus synthetic
/// monotone anchors that pin the satisfied / neutral / dissatisfied ends of
/// the scale.
pub fn bundled_calibration_set() -> Vec<CalibrationExample> {
    let sv = |fb: u8, dwell: u8, coh: f64, sim: f64, sent: f64| SignalVector {
        fb,
        dwell,
        coherence: coh,
        similarity: sim,
        sentiment: sent,
    };
    vec![
        // Archetypes: praised, moderate, negative, follow-up.
        CalibrationExample { signals: sv(1, 1, 0.92, -0.2, 1.0), target: 0.74 },
        CalibrationExample { signals: sv(0, 2, 0.75, -0.4, 0.0), target: 0.52 },
        CalibrationExample { signals: sv(0, 0, 0.38, -0.6, -1.0), target: 0.18 },
        CalibrationExample { signals: sv(0, 2, 0.81, -0.5, -0.2), target: 0.38 },
        // Monotone anchors.
        CalibrationExample { signals: sv(1, 1, 0.95, 0.0, 1.0), target: 0.9 },
        CalibrationExample { signals: sv(0, 0, -0.9, -1.0, -1.0), target: -0.9 },
        CalibrationExample { signals: sv(0, 0, 0.0, 0.0, 0.0), target: 0.0 },
        // Low-coherence praise and complaint, as produced by live traffic.
        CalibrationExample { signals: sv(1, 1, 0.15, 0.0, 1.0), target: 0.8 },
        CalibrationExample { signals: sv(0, 0, 0.15, 0.0, -1.0), target: -0.4 },
        CalibrationExample { signals: sv(0, 2, 0.15, -0.3, 0.0), target: 0.1 },
    ]
}
