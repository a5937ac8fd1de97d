use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::Matrix;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Matrix>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let (pm, mm, vm, gm) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice(), g.as_slice());
            for i in 0..pm.len() {
                mm[i] = self.beta1 * mm[i] + (1.0 - self.beta1) * gm[i];
                vm[i] = self.beta2 * vm[i] + (1.0 - self.beta2) * gm[i] * gm[i];
                let update = (mm[i] / c1) / ((vm[i] / c2).sqrt() + self.eps);
                pm[i] -= lr * (update + self.weight_decay * pm[i]);
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Matrix::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
