//! Adam with inverse-time learning-rate decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Inverse-time decay: `lr_t = lr0 / (1 + decay * t)`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamConfig {
    /// Step size used by the update that follows `t` completed updates.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr0 / (1.0 + self.decay * t as f64)
    }
}

/// Optimizer state: one first/second moment pair per parameter tensor and
/// the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Self {
            config,
            t: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam step over every parameter tensor.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::ShapeMismatch {
                expected: alloc::vec![self.first.len()],
                got: alloc::vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            g.expect_shape(p.shape())?;
            m.expect_shape(p.shape())?;
        }
        let cfg = self.config;
        let step = self.t + 1;
        let lr = T::c(cfg.lr_at(self.t));
        let bc1 = T::c(1.0 - libm::pow(cfg.beta1, step as f64));
        let bc2 = T::c(1.0 - libm::pow(cfg.beta2, step as f64));
        let (b1, b2, eps) = (T::c(cfg.beta1), T::c(cfg.beta2), T::c(cfg.epsilon));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.t = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_hand_calculation() {
        // m_hat = v_hat = 1, so the step is lr0 / (1 + eps).
        let mut theta = Tensor::<f64>::zeros(&[1]);
        let mut adam = Adam::new(AdamConfig::default(), &[&theta]);
        adam.update(alloc::vec![&mut theta], &[Tensor::full(&[1], 1.0)]).unwrap();
        assert_abs_diff_eq!(theta.data()[0], -0.001 / (1.0 + 1e-7), epsilon = 1e-15);
        assert_abs_diff_eq!(theta.data()[0], -0.000999999, epsilon = 1e-9);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = Tensor::<f64>::from_fn(&[2, 2], |i| i as f64 - 1.5);
        let before = theta.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&theta]);
        for _ in 0..5 {
            adam.update(alloc::vec![&mut theta], &[Tensor::zeros(&[2, 2])]).unwrap();
        }
        assert_eq!(theta, before);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn inverse_time_decay() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr_at(0), 0.001);
        assert_abs_diff_eq!(cfg.lr_at(1_000_000), 0.0005, epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut theta = Tensor::<f64>::zeros(&[2]);
        let mut adam = Adam::new(AdamConfig::default(), &[&theta]);
        assert!(adam.update(alloc::vec![&mut theta], &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.t, 0);
    }
}
