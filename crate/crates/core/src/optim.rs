//! Adaptive-moment optimizer with decoupled weight decay, and global-norm
//! gradient clipping.

use crate::model::{Group, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr_encoder: f64,
    pub lr_crf: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    fn lr(&self, group: Group) -> f64 {
        match group {
            Group::Encoder => self.lr_encoder,
            Group::Crf => self.lr_crf,
        }
    }
}

pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Model,
    second: Model,
}

impl AdamW {
    pub fn new(model: &Model, config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            first: model.zeros_like(),
            second: model.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `model` from the dense gradient `grad`.
    pub fn step(&mut self, model: &mut Model, grad: &Model) {
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let params = model.named_mut();
        let grads = grad.named();
        let firsts = self.first.named_mut();
        let seconds = self.second.named_mut();
        for ((((_, group, mut p), (_, _, g)), (_, _, mut m)), (_, _, mut v)) in
            params.into_iter().zip(grads).zip(firsts).zip(seconds)
        {
            let lr = c.lr(group);
            let p = p.as_slice_mut().expect("parameters are contiguous");
            let g = g.as_slice().expect("gradients are contiguous");
            let m = m.as_slice_mut().expect("moments are contiguous");
            let v = v.as_slice_mut().expect("moments are contiguous");
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * c.weight_decay * p[i];
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

pub fn global_norm(grad: &Model) -> f64 {
    grad.named()
        .iter()
        .flat_map(|(_, _, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grad` so its global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm(grad: &mut Model, max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.visit_mut(|_, _, mut t| t.mapv_inplace(|v| v * scale));
    }
    norm
}
