//! Layer primitives with analytic backward passes.
//!
//! The `*_acc` kernels accumulate into caller-provided gradient buffers and
//! are what the model uses on the hot path; the checked wrappers allocate.

use rand::Rng;

use super::{NnError, Parameter, Tensor};

fn check_len(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { expected: vec![expected], got: vec![got] })
    }
}

/// `out = W x + b` for a row-major `W` of shape `[m, n]`.
pub fn affine_acc(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        *o = b[i] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Accumulates `dW += g xᵀ`, `db += g` and, when requested, `dx += Wᵀ g`.
pub fn affine_backward_acc(
    w: &[f64],
    x: &[f64],
    upstream: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    let n = x.len();
    for (i, &g) in upstream.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad_b[i] += g;
        for (gw, xv) in grad_w[i * n..(i + 1) * n].iter_mut().zip(x) {
            *gw += g * xv;
        }
    }
    if let Some(gx) = grad_x {
        for (i, &g) in upstream.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wv) in gx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *d += g * wv;
            }
        }
    }
}

pub fn affine_forward(w: &Tensor, b: &Tensor, x: &[f64]) -> Result<Vec<f64>, NnError> {
    let (m, n) = w.dims2()?;
    check_len(m, b.len())?;
    check_len(n, x.len())?;
    let mut out = vec![0.0; m];
    affine_acc(w.data(), b.data(), x, &mut out);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads {
    pub w: Tensor,
    pub b: Tensor,
    pub x: Vec<f64>,
}

pub fn affine_backward(w: &Tensor, x: &[f64], upstream: &[f64]) -> Result<AffineGrads, NnError> {
    let (m, n) = w.dims2()?;
    check_len(n, x.len())?;
    check_len(m, upstream.len())?;
    let mut g = AffineGrads { w: Tensor::zeros(&[m, n]), b: Tensor::zeros(&[m]), x: vec![0.0; n] };
    affine_backward_acc(w.data(), x, upstream, g.w.data_mut(), g.b.data_mut(), Some(&mut g.x));
    Ok(g)
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `upstream` where the ReLU output was zero.
pub fn relu_backward_inplace(output: &[f64], upstream: &mut [f64]) {
    for (g, &y) in upstream.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Samples an index from `softmax(logits)`; returns it with its log-probability.
pub fn softmax_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64), NnError> {
    if logits.len() < 2 {
        return Err(NnError::ShapeMismatch { expected: vec![2], got: vec![logits.len()] });
    }
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(NnError::NonFinite("logits"));
    }
    let p = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut idx = p.len() - 1;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            idx = i;
            break;
        }
    }
    Ok((idx, log_softmax(logits)[idx]))
}

pub fn argmax(x: &[f64]) -> usize {
    x.iter().enumerate().fold(0, |best, (i, v)| if *v > x[best] { i } else { best })
}

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Affine {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::uniform(&[outputs, inputs], bound, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs()];
        affine_acc(self.weight.value.data(), self.bias.value.data(), x, &mut out);
        out
    }

    /// Accumulates parameter gradients; adds `Wᵀ g` into `grad_x` if given.
    pub fn backward(&mut self, x: &[f64], upstream: &[f64], grad_x: Option<&mut [f64]>) {
        affine_backward_acc(
            self.weight.value.data(),
            x,
            upstream,
            self.weight.grad.data_mut(),
            self.bias.grad.data_mut(),
            grad_x,
        );
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }
}

/// Memory update `m_t = ReLU(W_m m_{t-1} + W_c c_t + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCell {
    pub w_m: Parameter,
    pub w_c: Parameter,
    pub bias: Parameter,
}

impl RecurrentCell {
    pub fn new<R: Rng + ?Sized>(name: &str, memory: usize, input: usize, rng: &mut R) -> Self {
        Self {
            w_m: Parameter::new(
                format!("{name}.w_m"),
                Tensor::uniform(&[memory, memory], 1.0 / (memory as f64).sqrt(), rng),
            ),
            w_c: Parameter::new(format!("{name}.w_c"), Tensor::uniform(&[memory, input], 1.0 / (input as f64).sqrt(), rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[memory])),
        }
    }

    pub fn memory(&self) -> usize {
        self.w_m.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_c.shape()[1]
    }

    pub fn forward(&self, m_prev: &[f64], c: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.memory(), m_prev.len())?;
        check_len(self.input(), c.len())?;
        Ok(self.forward_unchecked(m_prev, c))
    }

    pub(crate) fn forward_unchecked(&self, m_prev: &[f64], c: &[f64]) -> Vec<f64> {
        let d = self.memory();
        let mut out = vec![0.0; d];
        affine_acc(self.w_c.value.data(), self.bias.value.data(), c, &mut out);
        let zero = vec![0.0; d];
        let mut rec = vec![0.0; d];
        affine_acc(self.w_m.value.data(), &zero, m_prev, &mut rec);
        for (o, r) in out.iter_mut().zip(rec) {
            *o = (*o + r).max(0.0);
        }
        out
    }

    /// Backward through one step given its inputs and output. Accumulates
    /// parameter gradients and returns `(d m_prev, d c)`.
    pub fn backward(&mut self, m_prev: &[f64], c: &[f64], m: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = upstream.to_vec();
        relu_backward_inplace(m, &mut g);
        let mut g_prev = vec![0.0; m_prev.len()];
        let mut g_c = vec![0.0; c.len()];
        affine_backward_acc(
            self.w_m.value.data(),
            m_prev,
            &g,
            self.w_m.grad.data_mut(),
            self.bias.grad.data_mut(),
            Some(&mut g_prev),
        );
        // the bias is shared between the two products; count it once
        let mut scratch_b = vec![0.0; g.len()];
        affine_backward_acc(self.w_c.value.data(), c, &g, self.w_c.grad.data_mut(), &mut scratch_b, Some(&mut g_c));
        (g_prev, g_c)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.w_m, &mut self.w_c, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter; 3] {
        [&self.w_m, &self.w_c, &self.bias]
    }
}

/// Lookup table mapping word ids to dense vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: Parameter,
}

impl Embedding {
    /// Entries uniform in `±0.1`.
    pub fn new<R: Rng + ?Sized>(name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self { table: Parameter::new(format!("{name}.table"), Tensor::uniform(&[vocab, dim], 0.1, rng)) }
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, id: usize) -> Vec<f64> {
        self.table.value.row(id).to_vec()
    }

    pub fn backward(&mut self, id: usize, upstream: &[f64]) {
        let d = self.dim();
        for (g, u) in self.table.grad.data_mut()[id * d..(id + 1) * d].iter_mut().zip(upstream) {
            *g += u;
        }
    }
}
