//! AdaDelta with a learning-rate multiplier and coupled L2 weight decay.
//!
//! Per parameter, with `g ← g + weight_decay · x`:
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 − ρ) g²
//! Δ      = −√(E[Δx²] + ε) / √(E[g²] + ε) · g
//! E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δ²
//! x      ← x + lr · Δ
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            rho: 0.9,
            epsilon: 1e-6,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    pub config: AdaDeltaConfig,
    pub square_avg: Vec<f64>,
    pub acc_delta: Vec<f64>,
}

impl AdaDeltaState {
    pub fn new(len: usize, config: AdaDeltaConfig) -> Self {
        AdaDeltaState {
            config,
            square_avg: vec![0.0; len],
            acc_delta: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.square_avg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.square_avg.is_empty()
    }

    /// One update of `params` in place. `lr` is the multiplier on the
    /// AdaDelta step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.len(), "parameter length mismatch");
        assert_eq!(grads.len(), self.len(), "gradient length mismatch");
        let AdaDeltaConfig {
            rho,
            epsilon,
            weight_decay,
        } = self.config;
        for (((x, &g), sq), acc) in params
            .iter_mut()
            .zip(grads)
            .zip(self.square_avg.iter_mut())
            .zip(self.acc_delta.iter_mut())
        {
            let g = g + weight_decay * *x;
            *sq = rho * *sq + (1.0 - rho) * g * g;
            let delta = -((*acc + epsilon).sqrt() / (*sq + epsilon).sqrt()) * g;
            *acc = rho * *acc + (1.0 - rho) * delta * delta;
            *x += lr * delta;
        }
    }
}
