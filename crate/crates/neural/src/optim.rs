//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape, NeuralError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NeuralError::InvalidConfig(format!("bad AdamW settings {self:?}")))
        }
    }
}

/// First and second moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every tensor in `params` with the matching gradient.
    pub fn step(&mut self, opt: &AdamW, params: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape("optimizer tensors", self.m.len(), params.len().max(grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(shape(&format!("optimizer tensor {i}"), self.m[i].len(), p.len().max(g.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (((w, &gi), m), v) in p.iter_mut().zip(g.iter()).zip(self.m[i].iter_mut()).zip(self.v[i].iter_mut()) {
                let gi = f64::from(gi);
                let mi = opt.beta1 * f64::from(*m) + (1.0 - opt.beta1) * gi;
                let vi = opt.beta2 * f64::from(*v) + (1.0 - opt.beta2) * gi * gi;
                *m = mi as f32;
                *v = vi as f32;
                let update = (mi / c1) / ((vi / c2).sqrt() + opt.eps) + opt.weight_decay * f64::from(*w);
                *w = (f64::from(*w) - opt.lr * update) as f32;
            }
        }
        Ok(())
    }
}
