//! Decoupled-weight-decay Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Gradients;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, clip_norm: 1.0 }
    }
}

pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u32,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// Applies one update. Weight decay skips vectors (biases, norms).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let c = self.config;
        self.t += 1;
        let mut scale = 1.0f32;
        if c.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > c.clip_norm {
                scale = c.clip_norm / norm;
            }
        }
        let bc1 = 1.0 - libm::powf(c.beta1, self.t as f32);
        let bc2 = 1.0 - libm::powf(c.beta2, self.t as f32);
        for (pid, tensor) in store.tensors.iter_mut().enumerate() {
            let decay = if tensor.shape.len() >= 2 { c.weight_decay } else { 0.0 };
            let g = &grads.grads[pid];
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            for i in 0..tensor.data.len() {
                let gi = g[i] * scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let p = &mut tensor.data[i];
                *p -= c.lr * (mhat / (libm::sqrtf(vhat) + c.eps) + decay * *p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.push("w", vec![1, 2], vec![3.0, -2.0]);
        store.push("t", vec![2, 1], vec![1.0, 1.0]);
        let mut opt = AdamW::new(
            AdamWConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() },
            &store,
        );
        let loss_of = |s: &ParamStore| {
            let mut tape = Tape::new();
            let v = tape.bind(s);
            let z = tape.matmul(v[0], v[1]);
            let l = tape.bce_with_logits(z, alloc::vec![(0, 1.0, 1.0)]);
            (tape.value(l)[0], tape.backward(l, s))
        };
        let (first, _) = loss_of(&store);
        for _ in 0..200 {
            let (_, g) = loss_of(&store);
            opt.step(&mut store, &g);
        }
        let (last, _) = loss_of(&store);
        assert!(last < first * 0.1, "{first} -> {last}");
    }
}
