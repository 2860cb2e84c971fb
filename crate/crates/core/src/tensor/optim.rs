use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Real, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty folded into the gradient; off by default.
    pub weight_decay: f64,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

/// Moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        AdamState {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        Adam {
            config,
            state: AdamState::zeros_like(params),
        }
    }

    /// Applies one update from the `grad` held by each parameter.
    ///
    /// Parameters without a gradient are skipped. A non-finite gradient
    /// anywhere aborts the whole step before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<(), TensorError> {
        let names = params.names().to_vec();
        let tensors = params.tensors_mut();
        if tensors.len() != self.state.first_moment.len() {
            return Err(TensorError::invalid("adam", "optimizer state does not match parameters"));
        }
        let mut sq_norm = 0.0f64;
        for (name, t) in names.iter().zip(tensors.iter()) {
            if let Some(g) = &t.grad {
                if g.len() != t.numel() {
                    return Err(TensorError::invalid("adam", format!("gradient shape for {name}")));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFiniteGradient { param: name.clone() });
                }
                sq_norm += g.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
            }
        }
        let clip = match self.config.grad_clip {
            Some(max) if sq_norm.sqrt() > max => T::of(max / sq_norm.sqrt()),
            _ => T::one(),
        };

        self.state.step_count += 1;
        let c = &self.config;
        let step = self.state.step_count as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::of(1.0 - c.beta1.powi(step));
        let bias2 = T::of(1.0 - c.beta2.powi(step));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.epsilon), T::of(c.weight_decay));
        for (i, t) in tensors.iter_mut().enumerate() {
            let Some(g) = t.grad.take() else { continue };
            let m = self.state.first_moment[i].data_mut();
            let v = self.state.second_moment[i].data_mut();
            let w = t.data_mut();
            for j in 0..w.len() {
                let gj = g[j] * clip + wd * w[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.grad = Some(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new([1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..10 {
            s.tensors_mut()[0].grad = Some(vec![0.0]);
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.01 → m̂ = v̂ = 1 → Δ = lr / (1 + eps)
        let mut s = store(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        s.tensors_mut()[0].grad = Some(vec![1.0]);
        adam.step(&mut s).unwrap();
        let expect = 1.0 - 2e-4 / (1.0 + 1e-8);
        assert!((s.tensors()[0].data()[0] - expect).abs() < 1e-15);
        assert!((s.tensors()[0].data()[0] - 0.9998).abs() < 1e-9);
        assert_eq!(adam.state.step_count, 1);
    }

    #[test]
    fn nan_gradient_aborts_without_change() {
        let mut s = store(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        s.tensors_mut()[0].grad = Some(vec![f64::NAN]);
        let err = adam.step(&mut s).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient { ref param } if param == "x"));
        assert_eq!(s.tensors()[0].data()[0], 1.0);
        assert_eq!(adam.state.step_count, 0);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = store(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &s,
        );
        let mut prev = 1.0f64;
        for step in 0..100 {
            let x = s.tensors()[0].data()[0];
            s.tensors_mut()[0].grad = Some(vec![2.0 * x]);
            adam.step(&mut s).unwrap();
            let now = s.tensors()[0].data()[0].abs();
            if step >= 1 {
                assert!(now < prev, "step {step}: {now} !< {prev}");
            }
            prev = now;
        }
        assert!(prev < 0.5, "{prev}");
    }
}
