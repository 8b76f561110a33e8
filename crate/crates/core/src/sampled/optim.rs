use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OptimizerKind {
    Adam(AdamParams),
    Sgd,
}

/// First-order optimizer with a learning rate per parameter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        let n_state = if matches!(kind, OptimizerKind::Adam(_)) { n } else { 0 };
        Optimizer {
            kind,
            m: vec![0.0; n_state],
            v: vec![0.0; n_state],
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// `params -= lr ⊙ direction(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, g), l) in params.iter_mut().zip(grad).zip(lr) {
                    *p -= l * g;
                }
            }
            OptimizerKind::Adam(AdamParams { beta1, beta2, eps }) => {
                self.t += 1;
                let c1 = 1.0 - libm::pow(beta1, self.t as f64);
                let c2 = 1.0 - libm::pow(beta2, self.t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr[i] * m_hat / (math::sqrt(v_hat) + eps);
                }
            }
        }
    }

    /// Moves the moment estimates of `from` onto `to` (same length), used
    /// when a parameter block is shifted along the chain.
    pub fn copy_state(&mut self, from: Range<usize>, to: usize) {
        if !self.m.is_empty() {
            self.m.copy_within(from.clone(), to);
            self.v.copy_within(from, to);
        }
    }
}
