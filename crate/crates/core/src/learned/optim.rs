//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return invalid("learning rate and epsilon must be positive, weight decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return invalid("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        })
    }

    /// One update. Decay is applied to the entries where `decay` is true,
    /// as `θ ← θ - lr·wd·θ` before the moment step.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], decay: &[bool]) {
        let c = &self.cfg;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
            if decay[k] {
                params[k] -= c.learning_rate * c.weight_decay * params[k];
            }
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            params[k] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
    }
}
