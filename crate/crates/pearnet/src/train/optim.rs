//! Adam with decoupled weight decay and an optional running maximum of the
//! second moment.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, amsgrad: true }
    }
}

impl AdamWConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{prefix}.{key}"), msg))
            }
        };
        check(self.lr.is_finite() && self.lr >= 0.0, "lr", "must be finite and >= 0")?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must be in [0, 1)")?;
        check(self.eps.is_finite() && self.eps > 0.0, "eps", "must be > 0")?;
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, "weight_decay", "must be >= 0")
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    v_max: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros(), v_max: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid("optimizer state, parameters and gradients disagree in count"));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
        let step_size = c.lr / bc1;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "gradient {k} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v, vmax) = (&mut self.m[k], &mut self.v[k], &mut self.v_max[k]);
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                *x -= c.lr * c.weight_decay * *x;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let second = if c.amsgrad {
                    vmax[i] = vmax[i].max(v[i]);
                    vmax[i]
                } else {
                    v[i]
                };
                let denom = second.sqrt() / bc2_sqrt + c.eps;
                *x -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}
