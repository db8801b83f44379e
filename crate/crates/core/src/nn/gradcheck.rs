//! Central finite-difference checks of the analytic gradients.
//!
//! Each check builds a random instance, projects the layer output onto a
//! random direction to get a scalar, and compares the analytic gradient of
//! that scalar against `(f(x + h) - f(x - h)) / 2h` for every input and
//! parameter entry.

use rand::Rng;

use super::layers::{affine_backward, affine_forward, Embedding, RecurrentCell};
use super::loss::{baseline_loss, bce_loss, policy_entropy, reinforce_loss, PolicyStep};
use super::Tensor;
use crate::rng;

pub const FD_STEP: f64 = 1e-6;
/// Gradient magnitude below which the error is measured in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;
pub const REL_ERR_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_ERR_TOLERANCE
    }
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn randn<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn check_affine<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
    let w = Tensor::from_vec(&[m, n], randn(m * n, rng)).unwrap();
    let b = Tensor::from_vec(&[m], randn(m, rng)).unwrap();
    let x = randn(n, rng);
    let dir = randn(m, rng);
    let g = affine_backward(&w, &x, &dir).unwrap();
    let f_w = |wv: &[f64]| dot(&dir, &affine_forward(&Tensor::from_vec(&[m, n], wv.to_vec()).unwrap(), &b, &x).unwrap());
    let f_b = |bv: &[f64]| dot(&dir, &affine_forward(&w, &Tensor::from_vec(&[m], bv.to_vec()).unwrap(), &x).unwrap());
    let f_x = |xv: &[f64]| dot(&dir, &affine_forward(&w, &b, xv).unwrap());
    [
        max_relative_error(g.w.data(), &central_difference(f_w, w.data(), FD_STEP)),
        max_relative_error(g.b.data(), &central_difference(f_b, b.data(), FD_STEP)),
        max_relative_error(&g.x, &central_difference(f_x, &x, FD_STEP)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn check_recurrent_cell<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (d_m, d_c) = (rng.gen_range(1..8), rng.gen_range(1..8));
    let mut cell = RecurrentCell::new("cell", d_m, d_c, rng);
    for p in cell.params_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&randn(n, rng));
    }
    let (m_prev, c) = (randn(d_m, rng), randn(d_c, rng));
    let dir = randn(d_m, rng);
    let out = cell.forward(&m_prev, &c).unwrap();
    let (g_prev, g_c) = cell.backward(&m_prev, &c, &out, &dir);
    let base = cell.clone();
    let mut worst = max_relative_error(
        &g_prev,
        &central_difference(|v| dot(&dir, &base.forward(v, &c).unwrap()), &m_prev, FD_STEP),
    );
    worst = worst.max(max_relative_error(
        &g_c,
        &central_difference(|v| dot(&dir, &base.forward(&m_prev, v).unwrap()), &c, FD_STEP),
    ));
    for k in 0..3 {
        let analytic = cell.params()[k].grad.data().to_vec();
        let x0 = base.params()[k].value.data().to_vec();
        let numeric = central_difference(
            |v| {
                let mut probe = base.clone();
                probe.params_mut()[k].value.data_mut().copy_from_slice(v);
                dot(&dir, &probe.forward(&m_prev, &c).unwrap())
            },
            &x0,
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

pub fn check_embedding<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let (vocab, dim) = (rng.gen_range(2..10), rng.gen_range(1..6));
    let mut emb = Embedding::new("emb", vocab, dim, rng);
    let id = rng.gen_range(0..vocab);
    let dir = randn(dim, rng);
    emb.backward(id, &dir);
    let base = emb.table.value.data().to_vec();
    let numeric = central_difference(
        |v| {
            let t = Tensor::from_vec(&[vocab, dim], v.to_vec()).unwrap();
            dot(&dir, t.row(id))
        },
        &base,
        FD_STEP,
    );
    max_relative_error(emb.table.grad.data(), &numeric)
}

pub fn check_bce<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let logits = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    let label = rng.gen_bool(0.5);
    let (_, g) = bce_loss(label, &logits);
    let numeric = central_difference(|z| bce_loss(label, &[z[0], z[1]]).0, &logits, FD_STEP);
    max_relative_error(&g, &numeric)
}

pub fn check_reinforce<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let len = rng.gen_range(1..7);
    let k = rng.gen_range(2..5);
    let steps: Vec<PolicyStep> =
        (0..len).map(|_| PolicyStep { logits: randn(k, rng), action: rng.gen_range(0..k) }).collect();
    let returns = vec![rng.gen_range(-1.0..1.5); len];
    let baselines = randn(len, rng);
    let (_, grads) = reinforce_loss(&steps, &returns, &baselines).unwrap();
    let flat: Vec<f64> = steps.iter().flat_map(|s| s.logits.clone()).collect();
    let numeric = central_difference(
        |v| {
            let probe: Vec<PolicyStep> = steps
                .iter()
                .enumerate()
                .map(|(t, s)| PolicyStep { logits: v[t * k..(t + 1) * k].to_vec(), action: s.action })
                .collect();
            reinforce_loss(&probe, &returns, &baselines).unwrap().0
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&grads.concat(), &numeric)
}

pub fn check_baseline_loss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let len = rng.gen_range(1..8);
    let returns = vec![rng.gen_range(-1.0..1.5); len];
    let baselines = randn(len, rng);
    let (_, g) = baseline_loss(&returns, &baselines).unwrap();
    let numeric = central_difference(|b| baseline_loss(&returns, b).unwrap().0, &baselines, FD_STEP);
    max_relative_error(&g, &numeric)
}

pub fn check_policy_entropy<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.gen_range(2..6);
    let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (_, g) = policy_entropy(&logits);
    max_relative_error(&g, &central_difference(|z| policy_entropy(z).0, &logits, FD_STEP))
}

/// Worst error per layer and loss over `instances` random draws each.
pub fn layer_suite(seed: u64, instances: usize) -> Vec<GradCheck> {
    type Check = fn(&mut rng::Stream) -> f64;
    let checks: [(&str, Check); 7] = [
        ("affine", check_affine),
        ("recurrent_cell", check_recurrent_cell),
        ("embedding", check_embedding),
        ("bce_loss", check_bce),
        ("reinforce_loss", check_reinforce),
        ("baseline_loss", check_baseline_loss),
        ("policy_entropy", check_policy_entropy),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let mut r = rng::stream(seed, name);
            let worst = (0..instances).map(|_| f(&mut r)).fold(0.0, f64::max);
            GradCheck { name: name.to_string(), max_rel_error: worst }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_and_loss_matches_finite_differences() {
        for check in layer_suite(2024, 100) {
            assert!(check.passed(), "{}: {:e}", check.name, check.max_rel_error);
        }
    }

    #[test]
    fn relative_error_detects_wrong_gradient() {
        assert!(max_relative_error(&[1.0, 2.0], &[1.0, 2.1]) > 0.04);
        assert_eq!(max_relative_error(&[0.0], &[1e-12]), 1e-9);
    }
}
