use super::Parameter;

/// Adam with bias correction. Gradients are cleared after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0 }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params {
            let (value, grad) = (p.value.data_mut(), p.grad.data_mut());
            let (m, v) = (p.adam_m.data_mut(), p.adam_v.data_mut());
            for i in 0..value.len() {
                let g = flush(grad[i]);
                m[i] = flush(self.beta1 * m[i] + (1.0 - self.beta1) * g);
                v[i] = flush(self.beta2 * v[i] + (1.0 - self.beta2) * g * g);
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}

/// Subnormal moments are numerically irrelevant here but make every later
/// step many times slower on common CPUs, so they are set to zero.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: &[f64], grads: &[f64]) -> Parameter {
        let mut p = Parameter::new("p", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap());
        p.grad.data_mut().copy_from_slice(grads);
        p
    }

    #[test]
    fn zero_gradient_leaves_values_and_decays_moments() {
        let mut fresh = param(&[1.0, -2.0], &[0.0, 0.0]);
        Adam::new(1e-3).step([&mut fresh]);
        assert_eq!(fresh.value.data(), &[1.0, -2.0]);

        let mut p = param(&[1.0, -2.0], &[0.5, 0.5]);
        let mut adam = Adam::new(1e-3);
        adam.step([&mut p]);
        let (m1, v1) = (p.adam_m.data()[0], p.adam_v.data()[0]);
        adam.step([&mut p]);
        assert!((p.adam_m.data()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((p.adam_v.data()[0] - 0.999 * v1).abs() < 1e-15);
        assert!(p.grad.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let lr = 1e-3;
        let g = [0.7, -3.0, 1e-3];
        let mut p = param(&[0.0; 3], &g);
        Adam::new(lr).step([&mut p]);
        for (x, gi) in p.value.data().iter().zip(g) {
            // m̂ = g, v̂ = g², so Δ = -lr g / (|g| + ε)
            let expect = -lr * gi / (gi.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let lr = 1e-2;
        let mut p = param(&[0.0], &[0.0]);
        let mut adam = Adam::new(lr);
        let mut last = 0.0;
        for _ in 0..5000 {
            p.grad.data_mut()[0] = 0.25;
            let before = p.value.data()[0];
            adam.step([&mut p]);
            last = p.value.data()[0] - before;
        }
        assert!((last.abs() - lr).abs() < 1e-6, "{last}");
    }
}
