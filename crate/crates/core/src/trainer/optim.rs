use std::collections::BTreeMap;

use crate::numeric::{Gradients, ParamStore, Tensor};

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter in `params`; names missing from `grads` are
    /// treated as zero gradients and only decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for (name, p) in params.iter_mut() {
            let (m, v) = self.moments.entry(name.to_owned()).or_insert_with(|| {
                (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols()))
            });
            let g = grads.get(name);
            let decay = lr * self.weight_decay;
            let values = p.values_mut();
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g.values()[i]);
                let mi = &mut m.values_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let mi = *mi;
                let vi = &mut v.values_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let vi = *vi;
                let update = (mi / bias1) / ((vi / bias2).sqrt() + self.epsilon);
                values[i] -= decay * values[i];
                values[i] -= lr * update;
            }
        }
    }
}
