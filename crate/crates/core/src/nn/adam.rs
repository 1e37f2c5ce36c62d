use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Self {
            config,
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
            t: 0,
        }
    }

    pub fn for_params(config: AdamConfig, params: &MlpParams<S>) -> Self {
        Self::new(config, params.param_count())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut MlpParams<S>, grads: &MlpParams<S>) -> Result<()> {
        if grads.sizes() != params.sizes() || params.param_count() != self.m.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.m.len(),
                got: grads.param_count(),
            });
        }
        self.t += 1;
        let (c1, c2, lr, b1, b2, eps) = self.coefficients();
        for (((p, g), m), v) in params.values_mut().zip(grads.values()).zip(&mut self.m).zip(&mut self.v) {
            adam_one(p, *g, m, v, (c1, c2, lr, b1, b2, eps));
        }
        Ok(())
    }

    pub fn step_slice(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        self.t += 1;
        let k = self.coefficients();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            adam_one(p, *g, m, v, k);
        }
        Ok(())
    }

    fn coefficients(&self) -> (S, S, S, S, S, S) {
        let c = &self.config;
        let t = self.t.min(i32::MAX as u64) as i32;
        (
            S::lit(1.0 - c.beta1.powi(t)),
            S::lit(1.0 - c.beta2.powi(t)),
            S::lit(c.lr),
            S::lit(c.beta1),
            S::lit(c.beta2),
            S::lit(c.eps),
        )
    }
}

#[inline]
fn adam_one<S: Scalar>(p: &mut S, g: S, m: &mut S, v: &mut S, (c1, c2, lr, b1, b2, eps): (S, S, S, S, S, S)) {
    *m = b1 * *m + (S::one() - b1) * g;
    *v = b2 * *v + (S::one() - b2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + eps);
}
