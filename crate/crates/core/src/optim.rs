//! Adam with a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::siren::NetworkParams;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `iterations`.
pub fn lr_schedule(step: usize, iterations: usize, lr_max: f64, lr_min: f64) -> f64 {
    let progress = if iterations == 0 {
        1.0
    } else {
        (step.min(iterations) as f64) / iterations as f64
    };
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &NetworkParams) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of every tensor, eps weights included.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
