//! Training losses and their gradients with respect to network outputs.

use super::layers::{log_softmax, softmax};
use super::NnError;

/// Probability clamp for the cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy on a two-way softmax head whose first output is the
/// probability of "yes". Returns the loss and its gradient with respect to the
/// two logits.
pub fn bce_loss(label: bool, logits: &[f64; 2]) -> (f64, [f64; 2]) {
    let y_hat = softmax(logits)[0];
    let y = if label { 1.0 } else { 0.0 };
    let d = y_hat - y;
    (bce(label, y_hat), [d, -d])
}

/// `-y log ŷ - (1 - y) log(1 - ŷ)` with ŷ clamped to `[ε, 1 - ε]`.
pub fn bce(label: bool, y_hat: f64) -> f64 {
    let p = y_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// One policy decision: the logits it was drawn from and the chosen index.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStep {
    pub logits: Vec<f64>,
    pub action: usize,
}

impl PolicyStep {
    pub fn log_prob(&self) -> f64 {
        log_softmax(&self.logits)[self.action]
    }
}

/// Score-function loss `-Σ log π(a_t) (R_t - b_t)`. Baselines are constants
/// here. Returns the loss and the gradient with respect to each step's logits.
pub fn reinforce_loss(
    steps: &[PolicyStep],
    returns: &[f64],
    baselines: &[f64],
) -> Result<(f64, Vec<Vec<f64>>), NnError> {
    if steps.len() != returns.len() {
        return Err(NnError::LengthMismatch(steps.len(), returns.len()));
    }
    if steps.len() != baselines.len() {
        return Err(NnError::LengthMismatch(steps.len(), baselines.len()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(steps.len());
    for ((step, r), b) in steps.iter().zip(returns).zip(baselines) {
        let adv = r - b;
        loss -= step.log_prob() * adv;
        let p = softmax(&step.logits);
        grads.push(
            p.iter()
                .enumerate()
                .map(|(k, pk)| -adv * ((k == step.action) as u8 as f64 - pk))
                .collect(),
        );
    }
    Ok((loss, grads))
}

/// Same loss computed from stored log-probabilities only (no gradient).
pub fn reinforce_objective(log_probs: &[f64], returns: &[f64], baselines: &[f64]) -> Result<f64, NnError> {
    if log_probs.len() != returns.len() || log_probs.len() != baselines.len() {
        return Err(NnError::LengthMismatch(log_probs.len(), returns.len().min(baselines.len())));
    }
    Ok(-log_probs.iter().zip(returns).zip(baselines).map(|((l, r), b)| l * (r - b)).sum::<f64>())
}

/// Entropy `H = -Σ p log p` of a softmax policy and its gradient with
/// respect to the logits, `-p_k (log p_k + H)`.
pub fn policy_entropy(logits: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let lp = log_softmax(logits);
    let h = -p.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
    let grad = p.iter().zip(&lp).map(|(pk, lk)| -pk * (lk + h)).collect();
    (h, grad)
}

/// Mean squared error `1/(T+1) Σ (R_t - b_t)²` and its gradient with
/// respect to each `b_t`.
pub fn baseline_loss(returns: &[f64], baselines: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if returns.len() != baselines.len() {
        return Err(NnError::LengthMismatch(returns.len(), baselines.len()));
    }
    if returns.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = returns.len() as f64;
    let loss = returns.iter().zip(baselines).map(|(r, b)| (r - b).powi(2)).sum::<f64>() / n;
    let grad = returns.iter().zip(baselines).map(|(r, b)| 2.0 * (b - r) / n).collect();
    Ok((loss, grad))
}
