use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, RealTensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: `p ← p − lr · wd · p` before the Adam step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-7,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<RealTensor>,
    pub v: Vec<RealTensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<RealTensor> = store
            .iter()
            .map(|(_, p)| RealTensor::zeros(p.value.shape().to_vec()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Restores moments saved alongside a checkpoint.
    pub fn from_parts(store: &ParamStore, config: AdamConfig, m: Vec<RealTensor>, v: Vec<RealTensor>, step: u64) -> Result<Self> {
        if m.len() != store.len() || v.len() != store.len() {
            return Err(Error::arg("Adam moments do not match the parameter count"));
        }
        for ((_, p), (a, b)) in store.iter().zip(m.iter().zip(&v)) {
            if a.shape() != p.value.shape() || b.shape() != p.value.shape() {
                return Err(Error::shape(format!("Adam moments for `{}` have the wrong shape", p.name)));
            }
        }
        Ok(Self { config, m, v, step })
    }

    /// One update from the gradients accumulated in `store`.
    pub fn update(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((x, g), mi), vi) in value
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *x -= lr * weight_decay * *x;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}
