use serde::{Deserialize, Serialize};

use crate::model::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are stored in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam { cfg, lr, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. Every parameter needs a gradient of its own shape.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (id, g) in params.ids().zip(grads) {
            match g {
                None => return Err(Error::contract(format!("missing gradient for {}", params.name(id)))),
                Some(g) if g.shape() != params.get(id).shape() => {
                    return Err(Error::contract(format!("gradient shape mismatch for {}", params.name(id))))
                }
                _ => {}
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in params.ids().enumerate() {
            let g = grads[k].as_ref().expect("checked above").data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let w = params.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= self.lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base · factor^floor(epoch / every)`; `every = 0` keeps it constant.
pub fn lr_schedule(epoch: usize, base_lr: f64, factor: f64, every: usize) -> f64 {
    if every == 0 {
        return base_lr;
    }
    base_lr * factor.powi((epoch / every) as i32)
}
