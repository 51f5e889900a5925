//! Adaptive-moment gradient optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for one parameter store. Moment tensors are kept aligned
/// with the store's entry order.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    cfg: AdamConfig,
    step_count: u64,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<S>) -> Self {
        let first_moment = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let second_moment = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            cfg,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Bias-corrected moment update. Refuses the whole step if any gradient
    /// is non-finite, naming the offending parameter.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>]) -> Result<()> {
        debug_assert_eq!(store.len(), grads.len());
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(store.entry(i).0.to_string()));
            }
        }
        self.step_count += 1;
        let lr = S::c(self.cfg.lr);
        let b1 = S::c(self.cfg.beta1);
        let b2 = S::c(self.cfg.beta2);
        let eps = S::c(self.cfg.epsilon);
        let corr1 = S::one() - S::c(self.cfg.beta1.powi(self.step_count as i32));
        let corr2 = S::one() - S::c(self.cfg.beta2.powi(self.step_count as i32));
        for i in 0..grads.len() {
            let g = &grads[i];
            let m = &mut self.first_moment[i];
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = b1 * *mv + (S::one() - b1) * gv;
            }
            let v = &mut self.second_moment[i];
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = b2 * *vv + (S::one() - b2) * gv * gv;
            }
            let p = store.entry_mut(i);
            for ((pv, &mv), &vv) in p
                .data_mut()
                .iter_mut()
                .zip(self.first_moment[i].data())
                .zip(self.second_moment[i].data())
            {
                let m_hat = mv / corr1;
                let v_hat = vv / corr2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut store = scalar_store(1.25);
        let mut adam = Adam::new(AdamConfig::with_lr(0.0), &store);
        for _ in 0..5 {
            adam.step(&mut store, &[Tensor::scalar(3.0)]).unwrap();
        }
        assert_eq!(store.get("w").unwrap().item(), 1.25);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_closed_form() {
        // g = 1, lr = 1e-3, default betas: m_hat = 1, v_hat = 1
        // -> delta = -lr / (1 + eps)
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &store);
        adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        let got = store.get("w").unwrap().item();
        assert!((got + 1e-3).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2), &store);
        let mut prev = 0.0;
        for _ in 0..200 {
            adam.step(&mut store, &[Tensor::scalar(2.5)]).unwrap();
            let now = store.get("w").unwrap().item();
            assert!(now < prev, "parameter must keep moving against the gradient");
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_refused_with_name() {
        let mut store = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let err = adam
            .step(&mut store, &[Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert!(err.to_string().contains("'w'"));
        // Step refused: parameter untouched, step_count unchanged.
        assert_eq!(store.get("w").unwrap().item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
