//! A small reverse-mode autodiff tape over row-major `f32` matrices.
//!
//! Only the operations needed by the toy transformer and the
//! pre-verification layer are provided. Values are computed eagerly when a
//! node is recorded; [`Tape::backward`] walks the nodes in reverse.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, gelu, gelu_grad, sigmoid, softplus, sqrtf, LN_EPS};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-query lists of key rows a query may attend to.
pub type KeyLists = Rc<Vec<Vec<usize>>>;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Gelu(Var),
    Gather { table: Var, ids: Vec<Option<u32>> },
    Attention { qkv: Var, heads: usize, keys: KeyLists, probs: Vec<f32>, offsets: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<u32>, weights: Vec<f32>, probs: Vec<f32> },
    Bce { logits: Var, items: Vec<(usize, f32, f32)> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f32>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every tensor of a [`ParamStore`], in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: store.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn global_norm(&self) -> f32 {
        sqrtf(self.grads.iter().flatten().map(|g| g * g).sum())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f32>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Var {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Records every tensor of `store` as a trainable leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        store
            .tensors
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let (rows, cols) = match t.shape.as_slice() {
                    [n] => (1, *n),
                    [r, c] => (*r, *c),
                    _ => (1, t.data.len()),
                };
                self.push(rows, cols, t.data.clone(), Op::Param(id))
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let out = math::matmul(self.value(a), self.value(b), n, k, m);
        self.push(n, m, out, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.shape(a);
        let b = self.value(bias);
        assert_eq!(b.len(), m);
        let mut out = self.value(a).to_vec();
        for r in 0..n {
            for (o, bv) in out[r * m..(r + 1) * m].iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push(n, m, out, Op::AddRow(a, bias))
    }

    /// `a (+ b_proj)`: matmul followed by a broadcast bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (n, m) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(n, m, out, Op::Add(a, b))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, m) = self.shape(x);
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f32>() / m as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / m as f32;
            let rs = 1.0 / sqrtf(var + LN_EPS);
            rstd[r] = rs;
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat[r * m + c] = h;
                out[r * m + c] = h * g[c] + b[c];
            }
        }
        self.push(n, m, out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (n, m) = self.shape(x);
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        self.push(n, m, out, Op::Gelu(x))
    }

    /// Rows of `table` selected by `ids`; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, ids: Vec<Option<u32>>) -> Var {
        let (_, m) = self.shape(table);
        let t = self.value(table);
        let mut out = vec![0.0; ids.len() * m];
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = id {
                let id = *id as usize;
                out[r * m..(r + 1) * m].copy_from_slice(&t[id * m..(id + 1) * m]);
            }
        }
        let n = ids.len();
        self.push(n, m, out, Op::Gather { table, ids })
    }

    /// Multi-head attention over a fused `[q | k | v]` input of width `3d`.
    pub fn attention(&mut self, qkv: Var, heads: usize, keys: KeyLists) -> Var {
        let (n, w3) = self.shape(qkv);
        let d = w3 / 3;
        let hd = d / heads;
        let scale = 1.0 / sqrtf(hd as f32);
        assert_eq!(keys.len(), n);
        let x = self.value(qkv);
        let mut out = vec![0.0; n * d];
        let mut offsets = Vec::with_capacity(n + 1);
        let mut probs = Vec::new();
        for i in 0..n {
            offsets.push(probs.len());
            let ks = &keys[i];
            for h in 0..heads {
                let q = &x[i * w3 + h * hd..i * w3 + (h + 1) * hd];
                let start = probs.len();
                for &j in ks {
                    let k = &x[j * w3 + d + h * hd..j * w3 + d + (h + 1) * hd];
                    probs.push(q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale);
                }
                math::softmax_in_place(&mut probs[start..]);
                let o = &mut out[i * d + h * hd..i * d + (h + 1) * hd];
                for (&p, &j) in probs[start..].iter().zip(ks) {
                    let v = &x[j * w3 + 2 * d + h * hd..j * w3 + 2 * d + (h + 1) * hd];
                    for (oi, vi) in o.iter_mut().zip(v) {
                        *oi += p * vi;
                    }
                }
            }
        }
        offsets.push(probs.len());
        self.push(n, d, out, Op::Attention { qkv, heads, keys, probs, offsets })
    }

    /// Weighted mean next-token cross-entropy; rows with weight 0 are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<u32>, weights: Vec<f32>) -> Var {
        let (n, v) = self.shape(logits);
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0f32;
        let wsum: f32 = weights.iter().sum();
        for r in 0..n {
            let row = &mut probs[r * v..(r + 1) * v];
            row.copy_from_slice(&lv[r * v..(r + 1) * v]);
            math::softmax_in_place(row);
            if weights[r] != 0.0 {
                let p = row[targets[r] as usize];
                // NaN must survive the floor so divergence is visible
                total += -weights[r] * libm::logf(if p.is_nan() { p } else { p.max(1e-30) });
            }
        }
        let loss = if wsum > 0.0 { total / wsum } else { 0.0 };
        self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets, weights, probs })
    }

    /// Weighted mean binary cross-entropy over single-logit rows.
    /// `items` holds `(row, label, weight)`.
    pub fn bce_with_logits(&mut self, logits: Var, items: Vec<(usize, f32, f32)>) -> Var {
        let (_, c) = self.shape(logits);
        assert_eq!(c, 1);
        let lv = self.value(logits);
        let wsum: f32 = items.iter().map(|i| i.2).sum();
        let total: f32 = items.iter().map(|&(r, y, w)| w * (softplus(lv[r]) - y * lv[r])).sum();
        let loss = if wsum > 0.0 { total / wsum } else { 0.0 };
        self.push(1, 1, vec![loss], Op::Bce { logits, items })
    }

    /// Back-propagates from the scalar `loss` and returns parameter gradients
    /// aligned with the store that was passed to [`Tape::bind`].
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Gradients {
        let mut grads: Vec<Vec<f32>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;
        let mut out = Gradients::zeros_like(store);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let g = core::mem::take(&mut grads[idx]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[*id] = g,
                Op::MatMul(a, b) => {
                    let (n, k) = self.shape(*a);
                    let m = node.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // dA = dC · Bᵀ
                    {
                        let ga = &mut grads[a.0];
                        for r in 0..n {
                            let gr = &g[r * m..(r + 1) * m];
                            for i in 0..k {
                                let brow = &bv[i * m..(i + 1) * m];
                                ga[r * k + i] += gr.iter().zip(brow).map(|(x, y)| x * y).sum::<f32>();
                            }
                        }
                    }
                    // dB = Aᵀ · dC
                    let gb = &mut grads[b.0];
                    for r in 0..n {
                        let gr = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let a_ri = av[r * k + i];
                            if a_ri == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[i * m..(i + 1) * m].iter_mut().zip(gr) {
                                *o += a_ri * x;
                            }
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    let m = node.cols;
                    for (x, y) in grads[a.0].iter_mut().zip(&g) {
                        *x += y;
                    }
                    let gb = &mut grads[bias.0];
                    for r in 0..node.rows {
                        for c in 0..m {
                            gb[c] += g[r * m + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (x, y) in grads[a.0].iter_mut().zip(&g) {
                        *x += y;
                    }
                    for (x, y) in grads[b.0].iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let m = node.cols;
                    let gv = self.value(*gamma).to_vec();
                    {
                        let gg = &mut grads[gamma.0];
                        for r in 0..node.rows {
                            for c in 0..m {
                                gg[c] += g[r * m + c] * xhat[r * m + c];
                            }
                        }
                    }
                    {
                        let gbeta = &mut grads[beta.0];
                        for r in 0..node.rows {
                            for c in 0..m {
                                gbeta[c] += g[r * m + c];
                            }
                        }
                    }
                    let gx = &mut grads[x.0];
                    for r in 0..node.rows {
                        let mut mean_d = 0.0f32;
                        let mut mean_dx = 0.0f32;
                        for c in 0..m {
                            let d = g[r * m + c] * gv[c];
                            mean_d += d;
                            mean_dx += d * xhat[r * m + c];
                        }
                        mean_d /= m as f32;
                        mean_dx /= m as f32;
                        for c in 0..m {
                            let d = g[r * m + c] * gv[c];
                            gx[r * m + c] += rstd[r] * (d - mean_d - xhat[r * m + c] * mean_dx);
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    for ((o, &gi), &xi) in grads[x.0].iter_mut().zip(&g).zip(xv) {
                        *o += gi * gelu_grad(xi);
                    }
                }
                Op::Gather { table, ids } => {
                    let m = node.cols;
                    let gt = &mut grads[table.0];
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(id) = id {
                            let id = *id as usize;
                            for c in 0..m {
                                gt[id * m + c] += g[r * m + c];
                            }
                        }
                    }
                }
                Op::Attention { qkv, heads, keys, probs, offsets } => {
                    let (n, w3) = self.shape(*qkv);
                    let d = w3 / 3;
                    let hd = d / heads;
                    let scale = 1.0 / sqrtf(hd as f32);
                    let x = self.value(*qkv);
                    let gx = &mut grads[qkv.0];
                    let mut dp = Vec::new();
                    for i in 0..n {
                        let ks = &keys[i];
                        let nk = ks.len();
                        for h in 0..*heads {
                            let p = &probs[offsets[i] + h * nk..offsets[i] + (h + 1) * nk];
                            let go = &g[i * d + h * hd..i * d + (h + 1) * hd];
                            dp.clear();
                            for (&pj, &j) in p.iter().zip(ks) {
                                let vo = j * w3 + 2 * d + h * hd;
                                let v = &x[vo..vo + hd];
                                dp.push(go.iter().zip(v).map(|(a, b)| a * b).sum::<f32>());
                                for t in 0..hd {
                                    gx[vo + t] += pj * go[t];
                                }
                            }
                            let dot: f32 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qo = i * w3 + h * hd;
                            for (jj, &j) in ks.iter().enumerate() {
                                let ds = p[jj] * (dp[jj] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let ko = j * w3 + d + h * hd;
                                for t in 0..hd {
                                    let q_t = x[qo + t];
                                    let k_t = x[ko + t];
                                    gx[qo + t] += ds * k_t;
                                    gx[ko + t] += ds * q_t;
                                }
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let v = self.nodes[logits.0].cols;
                    let wsum: f32 = weights.iter().sum();
                    if wsum > 0.0 {
                        let gl = &mut grads[logits.0];
                        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let s = g[0] * w / wsum;
                            for c in 0..v {
                                let y = if c == t as usize { 1.0 } else { 0.0 };
                                gl[r * v + c] += s * (probs[r * v + c] - y);
                            }
                        }
                    }
                }
                Op::Bce { logits, items } => {
                    let wsum: f32 = items.iter().map(|i| i.2).sum();
                    if wsum > 0.0 {
                        let lv = self.value(*logits).to_vec();
                        let gl = &mut grads[logits.0];
                        for &(r, y, w) in items {
                            gl[r] += g[0] * w / wsum * (sigmoid(lv[r]) - y);
                        }
                    }
                }
            }
        }
        out
    }
}
