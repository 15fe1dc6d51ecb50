use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{GlenError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set, in a fixed parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        let v = m.clone();
        AdamState { config, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update.
    ///
    /// `params` and `grads` must follow the order the state was created with.
    /// Every gradient is checked before any parameter moves, so a non-finite
    /// gradient leaves the parameters and the state untouched.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor)>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(GlenError::Invalid(format!(
                "Adam state tracks {} parameters, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(GlenError::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(GlenError::NonFiniteGradient(name.clone()));
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((theta, &g), m), v) in p.values_mut().iter_mut().zip(g.values()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(t: &mut Tensor) -> Vec<(String, &mut Tensor)> {
        vec![("theta".to_string(), t)]
    }

    #[test]
    fn first_step_from_zero() {
        let mut theta = Tensor::scalar(0.0);
        let mut state = AdamState::new(AdamConfig::with_lr(1e-3), [&theta]);
        state.step(named(&mut theta), &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = v_hat = 1 after bias correction
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((theta.item() - expected).abs() < 1e-18);
        assert!((theta.item() + 9.99999990e-4).abs() < 1e-12);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut theta = Tensor::from_rows(&[vec![0.3, -1.2]]);
        let before = theta.clone();
        let mut state = AdamState::new(AdamConfig::default(), [&theta]);
        state.step(named(&mut theta), &[Tensor::zeros(&[1, 2])]).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn constant_gradient_moves_monotonically_against_sign() {
        let mut theta = Tensor::scalar(0.0);
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), [&theta]);
        let mut trace = vec![theta.item()];
        for _ in 0..2 {
            state.step(named(&mut theta), &[Tensor::scalar(2.5)]).unwrap();
            trace.push(theta.item());
        }
        assert!(trace[1] < trace[0] && trace[2] < trace[1], "{trace:?}");
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut theta = Tensor::scalar(1.0);
        let mut state = AdamState::new(AdamConfig::default(), [&theta]);
        let err = state.step(named(&mut theta), &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(theta.item(), 1.0);
        assert_eq!(state.steps(), 0);
    }
}
