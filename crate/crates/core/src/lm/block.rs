//! Pre-norm transformer block shared by the language model and the
//! pre-verification layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{KeyLists, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{attend_row, gelu, layer_norm_row, row_matmul};
use crate::params::{ParamId, ParamStore};

use super::LayerKv;

/// Tensor ids of one block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w_qkv: ParamId,
    pub b_qkv: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w_fc: ParamId,
    pub b_fc: ParamId,
    pub w_proj: ParamId,
    pub b_proj: ParamId,
}

const NAMES: [&str; 12] = [
    "ln1.g", "ln1.b", "attn.w_qkv", "attn.b_qkv", "attn.w_o", "attn.b_o", "ln2.g", "ln2.b",
    "mlp.w_fc", "mlp.b_fc", "mlp.w_proj", "mlp.b_proj",
];

fn name(prefix: &str, n: &str) -> String {
    format!("{prefix}.{n}")
}

impl BlockIds {
    /// Adds freshly initialized block tensors; output projections are scaled
    /// down by `sqrt(2 · depth)`.
    pub fn init<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let std = 0.02;
        let proj_std = std / libm::sqrtf(2.0 * depth as f32);
        Self {
            ln1_g: store.ones(name(prefix, NAMES[0]), vec![d]),
            ln1_b: store.zeros(name(prefix, NAMES[1]), vec![d]),
            w_qkv: store.normal(name(prefix, NAMES[2]), vec![d, 3 * d], std, rng),
            b_qkv: store.zeros(name(prefix, NAMES[3]), vec![3 * d]),
            w_o: store.normal(name(prefix, NAMES[4]), vec![d, d], proj_std, rng),
            b_o: store.zeros(name(prefix, NAMES[5]), vec![d]),
            ln2_g: store.ones(name(prefix, NAMES[6]), vec![d]),
            ln2_b: store.zeros(name(prefix, NAMES[7]), vec![d]),
            w_fc: store.normal(name(prefix, NAMES[8]), vec![d, 4 * d], std, rng),
            b_fc: store.zeros(name(prefix, NAMES[9]), vec![4 * d]),
            w_proj: store.normal(name(prefix, NAMES[10]), vec![4 * d, d], proj_std, rng),
            b_proj: store.zeros(name(prefix, NAMES[11]), vec![d]),
        }
    }

    /// Looks the block up by name and checks shapes.
    pub fn resolve(store: &ParamStore, prefix: &str, d: usize) -> Result<Self> {
        let shapes: [Vec<usize>; 12] = [
            vec![d],
            vec![d],
            vec![d, 3 * d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, 4 * d],
            vec![4 * d],
            vec![4 * d, d],
            vec![d],
        ];
        let mut ids = [0usize; 12];
        for (i, n) in NAMES.iter().enumerate() {
            ids[i] = lookup(store, &name(prefix, n), &shapes[i])?;
        }
        Ok(Self {
            ln1_g: ids[0],
            ln1_b: ids[1],
            w_qkv: ids[2],
            b_qkv: ids[3],
            w_o: ids[4],
            b_o: ids[5],
            ln2_g: ids[6],
            ln2_b: ids[7],
            w_fc: ids[8],
            b_fc: ids[9],
            w_proj: ids[10],
            b_proj: ids[11],
        })
    }

    /// Runs the block over `n` new rows of `x` (in place).
    ///
    /// New keys/values are appended to `kv`, which already holds `base`
    /// rows. `allowed(i)` lists the key rows query `base + i` attends to.
    pub fn forward_rows(
        &self,
        p: &ParamStore,
        heads: usize,
        d: usize,
        x: &mut [f32],
        kv: &mut LayerKv,
        base: usize,
        allowed: &dyn Fn(usize) -> Vec<usize>,
    ) {
        let n = x.len() / d;
        let mut a = vec![0.0f32; d];
        let mut qkv = vec![0.0f32; 3 * d];
        let mut queries = vec![0.0f32; n * d];
        for r in 0..n {
            layer_norm_row(&x[r * d..(r + 1) * d], p.get(self.ln1_g), p.get(self.ln1_b), &mut a);
            row_matmul(&a, p.get(self.w_qkv), Some(p.get(self.b_qkv)), 3 * d, &mut qkv);
            queries[r * d..(r + 1) * d].copy_from_slice(&qkv[..d]);
            kv.keys.extend_from_slice(&qkv[d..2 * d]);
            kv.values.extend_from_slice(&qkv[2 * d..]);
        }
        let mut att = vec![0.0f32; d];
        let mut o = vec![0.0f32; d];
        let mut h = vec![0.0f32; 4 * d];
        for r in 0..n {
            let keys = allowed(base + r);
            attend_row(&queries[r * d..(r + 1) * d], &kv.keys, &kv.values, d, heads, &keys, &mut att);
            row_matmul(&att, p.get(self.w_o), Some(p.get(self.b_o)), d, &mut o);
            let xr = &mut x[r * d..(r + 1) * d];
            xr.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);
            layer_norm_row(xr, p.get(self.ln2_g), p.get(self.ln2_b), &mut a);
            row_matmul(&a, p.get(self.w_fc), Some(p.get(self.b_fc)), 4 * d, &mut h);
            h.iter_mut().for_each(|v| *v = gelu(*v));
            row_matmul(&h, p.get(self.w_proj), Some(p.get(self.b_proj)), d, &mut o);
            xr.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);
        }
    }

    /// Differentiable version of [`BlockIds::forward_rows`] over a whole sequence.
    pub fn forward_tape(&self, tape: &mut Tape, v: &[Var], heads: usize, x: Var, keys: KeyLists) -> Var {
        let a = tape.layer_norm(x, v[self.ln1_g], v[self.ln1_b]);
        let qkv = tape.linear(a, v[self.w_qkv], v[self.b_qkv]);
        let att = tape.attention(qkv, heads, keys);
        let o = tape.linear(att, v[self.w_o], v[self.b_o]);
        let x = tape.add(x, o);
        let a = tape.layer_norm(x, v[self.ln2_g], v[self.ln2_b]);
        let h = tape.linear(a, v[self.w_fc], v[self.b_fc]);
        let h = tape.gelu(h);
        let o = tape.linear(h, v[self.w_proj], v[self.b_proj]);
        tape.add(x, o)
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .find(name)
        .ok_or_else(|| Error::config(format!("missing tensor {name}")))?;
    if store.tensors[id].shape != shape {
        return Err(Error::config(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            store.tensors[id].shape
        )));
    }
    Ok(id)
}
