use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{KeyLists, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{layer_norm_row, row_matmul, softmax_f64};
use crate::params::{ParamId, ParamStore};
use crate::rng::{stream, Stream};

use super::block::{lookup, BlockIds};
use super::{check_forward_args, ForwardOutput, HiddenVec, KvCache, LanguageModel, ProbVec, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Transformer,
    Tabular,
    PreVerifier,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Tabular => "tabular",
            ModelKind::PreVerifier => "preverifier",
        }
    }
}

/// Architecture description of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Maximum number of cached positions.
    pub context_len: usize,
    pub seed: u64,
    /// Conditioning order of tabular models; ignored otherwise.
    pub order: usize,
}

impl ModelSpec {
    pub fn transformer(vocab_size: usize, layers: usize, d_model: usize, heads: usize, context_len: usize, seed: u64) -> Self {
        Self { kind: ModelKind::Transformer, vocab_size, layers, d_model, heads, context_len, seed, order: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ModelKind::PreVerifier && self.vocab_size < 2 {
            return Err(Error::config(format!("vocabulary size {} < 2", self.vocab_size)));
        }
        if self.kind != ModelKind::Tabular {
            if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
                return Err(Error::config(format!(
                    "d_model {} not divisible by heads {}",
                    self.d_model, self.heads
                )));
            }
            if self.layers == 0 {
                return Err(Error::config("at least one layer is required"));
            }
        } else if self.order == 0 {
            return Err(Error::config("tabular order must be at least 1"));
        }
        if self.context_len < 2 {
            return Err(Error::config("context length must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<BlockIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    w_head: ParamId,
    b_head: ParamId,
}

/// Decoder-only transformer: learned token and position embeddings,
/// pre-norm blocks, final layer norm and an untied output head.
///
/// The exported hidden state is the residual stream after the last block,
/// before the final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    spec: ModelSpec,
    params: ParamStore,
    ids: Ids,
}

impl Transformer {
    /// Randomly initialized model; weights depend only on `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.kind != ModelKind::Transformer {
            return Err(Error::config("spec kind must be transformer"));
        }
        spec.validate()?;
        let mut rng = stream(spec.seed, Stream::Init);
        let (v, d) = (spec.vocab_size, spec.d_model);
        let mut p = ParamStore::new();
        let tok_emb = p.normal("tok_emb", vec![v, d], 0.02, &mut rng);
        let pos_emb = p.normal("pos_emb", vec![spec.context_len, d], 0.01, &mut rng);
        let blocks = (0..spec.layers)
            .map(|l| BlockIds::init(&mut p, &format!("h{l}"), d, spec.layers, &mut rng))
            .collect();
        let lnf_g = p.ones("ln_f.g", vec![d]);
        let lnf_b = p.zeros("ln_f.b", vec![d]);
        let w_head = p.normal("head.w", vec![d, v], 0.02, &mut rng);
        let b_head = p.zeros("head.b", vec![v]);
        let ids = Ids { tok_emb, pos_emb, blocks, lnf_g, lnf_b, w_head, b_head };
        Ok(Self { spec, params: p, ids })
    }

    /// Rebuilds a model from stored tensors, checking every name and shape.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let (v, d) = (spec.vocab_size, spec.d_model);
        let ids = Ids {
            tok_emb: lookup(&params, "tok_emb", &[v, d])?,
            pos_emb: lookup(&params, "pos_emb", &[spec.context_len, d])?,
            blocks: (0..spec.layers)
                .map(|l| BlockIds::resolve(&params, &format!("h{l}"), d))
                .collect::<Result<_>>()?,
            lnf_g: lookup(&params, "ln_f.g", &[d])?,
            lnf_b: lookup(&params, "ln_f.b", &[d])?,
            w_head: lookup(&params, "head.w", &[d, v])?,
            b_head: lookup(&params, "head.b", &[v])?,
        };
        Ok(Self { spec, params, ids })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn embed(&self, tokens: &[TokenId], positions: &[usize]) -> Vec<f32> {
        let d = self.spec.d_model;
        let te = self.params.get(self.ids.tok_emb);
        let pe = self.params.get(self.ids.pos_emb);
        let mut x = vec![0.0f32; tokens.len() * d];
        for (r, (t, &pos)) in tokens.iter().zip(positions).enumerate() {
            let row = &mut x[r * d..(r + 1) * d];
            let tr = &te[t.index() * d..(t.index() + 1) * d];
            let pr = &pe[pos * d..(pos + 1) * d];
            for i in 0..d {
                row[i] = tr[i] + pr[i];
            }
        }
        x
    }

    fn head(&self, x: &[f32]) -> ForwardOutput {
        let d = self.spec.d_model;
        let v = self.spec.vocab_size;
        let n = x.len() / d;
        let mut a = vec![0.0f32; d];
        let mut logits = vec![0.0f32; v];
        let mut probs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            hidden.push(HiddenVec(row.to_vec()));
            layer_norm_row(row, self.params.get(self.ids.lnf_g), self.params.get(self.ids.lnf_b), &mut a);
            row_matmul(&a, self.params.get(self.ids.w_head), Some(self.params.get(self.ids.b_head)), v, &mut logits);
            probs.push(ProbVec(softmax_f64(&logits)));
        }
        ForwardOutput { probs, hidden }
    }

    /// Cache-free forward with explicit position ids and attention lists.
    ///
    /// `allowed(i)` gives the rows query `i` may attend to. Used for packed
    /// sequences and as the reference for cached decoding.
    pub fn forward_masked(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        allowed: &dyn Fn(usize) -> Vec<usize>,
    ) -> Result<ForwardOutput> {
        if tokens.is_empty() || tokens.len() != positions.len() {
            return Err(Error::arg("tokens and positions must be nonempty and equal length"));
        }
        if let Some(p) = positions.iter().find(|p| **p >= self.spec.context_len) {
            return Err(Error::Capacity { needed: p + 1, capacity: self.spec.context_len });
        }
        if let Some(t) = tokens.iter().find(|t| t.index() >= self.spec.vocab_size) {
            return Err(Error::arg(format!("token {} outside vocabulary", t.0)));
        }
        let d = self.spec.d_model;
        let mut x = self.embed(tokens, positions);
        let mut cache = KvCache::new(self.spec.layers, d, tokens.len());
        for (l, b) in self.ids.blocks.iter().enumerate() {
            b.forward_rows(&self.params, self.spec.heads, d, &mut x, cache.layer_mut(l), 0, allowed);
        }
        Ok(self.head(&x))
    }

    /// Plain causal forward over a whole sequence, without a cache.
    pub fn forward_full(&self, tokens: &[TokenId]) -> Result<ForwardOutput> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.forward_masked(tokens, &positions, &|q| (0..=q).collect())
    }

    /// Mean next-token cross-entropy over a batch of windows, on a tape.
    ///
    /// Each window of length `n + 1` contributes `n` predictions; windows are
    /// packed into one sequence with block-diagonal causal attention.
    pub fn loss_on_tape(&self, tape: &mut Tape, vars: &[Var], windows: &[&[TokenId]]) -> Var {
        let ids = &self.ids;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut positions = Vec::new();
        let mut keys = Vec::new();
        for w in windows {
            let n = w.len() - 1;
            let base = inputs.len();
            for i in 0..n {
                inputs.push(Some(w[i].0));
                targets.push(w[i + 1].0);
                positions.push(Some(i as u32));
                keys.push((base..=base + i).collect());
            }
        }
        let rows = inputs.len();
        let tok = tape.gather(vars[ids.tok_emb], inputs);
        let pos = tape.gather(vars[ids.pos_emb], positions);
        let mut x = tape.add(tok, pos);
        let keys: KeyLists = Rc::new(keys);
        for b in &ids.blocks {
            x = b.forward_tape(tape, vars, self.spec.heads, x, keys.clone());
        }
        let x = tape.layer_norm(x, vars[ids.lnf_g], vars[ids.lnf_b]);
        let logits = tape.linear(x, vars[ids.w_head], vars[ids.b_head]);
        tape.cross_entropy(logits, targets, vec![1.0; rows])
    }
}

impl LanguageModel for Transformer {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn hidden_size(&self) -> usize {
        self.spec.d_model
    }

    fn context_len(&self) -> usize {
        self.spec.context_len
    }

    fn new_cache(&self) -> KvCache {
        KvCache::new(self.spec.layers, self.spec.d_model, self.spec.context_len)
    }

    fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<ForwardOutput> {
        check_forward_args(tokens, cache, self.spec.vocab_size)?;
        if cache.num_layers() != self.spec.layers || cache.width() != self.spec.d_model {
            return Err(Error::arg("cache layout does not match model"));
        }
        let base = cache.len();
        let positions: Vec<usize> = (base..base + tokens.len()).collect();
        let d = self.spec.d_model;
        let mut x = self.embed(tokens, &positions);
        for (l, b) in self.ids.blocks.iter().enumerate() {
            b.forward_rows(&self.params, self.spec.heads, d, &mut x, cache.layer_mut(l), base, &|q| (0..=q).collect());
        }
        cache.commit(tokens.len(), tokens);
        Ok(self.head(&x))
    }
}
