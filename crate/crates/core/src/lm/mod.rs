//! Language-model abstraction: token and distribution types, the
//! [`LanguageModel`] trait with its two implementations, KV caches and
//! sampling primitives.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

pub mod block;
mod cache;
mod tabular;
mod tokenizer;
pub mod train;
mod transformer;

pub use cache::{KvCache, LayerKv};
pub use tabular::TabularModel;
pub use tokenizer::ByteTokenizer;
pub use train::{train_toy_lm, LmTrainConfig, LmTrainReport};
pub use transformer::{ModelKind, ModelSpec, Transformer};

/// Index into a model vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Tolerance on the total mass of a [`ProbVec`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// A normalized next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    /// Validates nonnegativity and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invariant("empty distribution".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::Invariant(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Invariant(format!("distribution sums to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights; fails when the total mass is zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Invariant(format!("cannot normalize weights with mass {sum}")));
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(v: usize) -> Self {
        Self(alloc::vec![1.0 / v as f64; v])
    }

    pub fn one_hot(v: usize, at: usize) -> Self {
        let mut p = alloc::vec![0.0; v];
        p[at] = 1.0;
        Self(p)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn prob(&self, t: TokenId) -> f64 {
        self.0[t.index()]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        -self.0.iter().filter(|p| **p > 0.0).map(|p| p * libm::log2(*p)).sum::<f64>()
    }
}

/// Final-layer hidden state for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenVec(pub Vec<f32>);

impl HiddenVec {
    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-input-position outputs of [`LanguageModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<ProbVec>,
    pub hidden: Vec<HiddenVec>,
}

/// An autoregressive model over a shared vocabulary.
///
/// Weights are immutable after construction; all mutable state lives in
/// the caller-owned [`KvCache`].
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn hidden_size(&self) -> usize;
    fn context_len(&self) -> usize;
    fn new_cache(&self) -> KvCache;

    /// Appends `tokens` to `cache` and returns one next-token distribution
    /// and one hidden state per input position.
    fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<ForwardOutput>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn hidden_size(&self) -> usize {
        (**self).hidden_size()
    }
    fn context_len(&self) -> usize {
        (**self).context_len()
    }
    fn new_cache(&self) -> KvCache {
        (**self).new_cache()
    }
    fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<ForwardOutput> {
        (**self).forward(tokens, cache)
    }
}

pub(crate) fn check_forward_args(
    tokens: &[TokenId],
    cache: &KvCache,
    vocab: usize,
) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::arg("forward needs at least one token"));
    }
    let needed = cache.len() + tokens.len();
    if needed > cache.capacity() {
        return Err(Error::Capacity { needed, capacity: cache.capacity() });
    }
    if let Some(t) = tokens.iter().find(|t| t.index() >= vocab) {
        return Err(Error::arg(format!("token {} outside vocabulary of {vocab}", t.0)));
    }
    Ok(())
}

fn check_dist(dist: &ProbVec) -> Result<()> {
    let sum: f64 = dist.as_slice().iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL || dist.as_slice().iter().any(|p| *p < 0.0) {
        return Err(Error::Invariant(format!("distribution sums to {sum}")));
    }
    Ok(())
}

/// Draws a token with probability `dist[v]`.
pub fn sample<R: Rng + ?Sized>(dist: &ProbVec, rng: &mut R) -> Result<TokenId> {
    check_dist(dist)?;
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.as_slice().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return Ok(TokenId(i as u32));
            }
        }
    }
    // Rounding left `u` above the accumulated mass.
    Ok(TokenId(last_positive as u32))
}

/// Argmax with lowest-index tie-break.
pub fn greedy(dist: &ProbVec) -> Result<TokenId> {
    check_dist(dist)?;
    Ok(TokenId(argmax(dist.as_slice()) as u32))
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Target-only autoregressive decode, one token per forward.
pub fn autoregressive_decode<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    max_new: usize,
    stop: &[TokenId],
    greedy_mode: bool,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let mut cache = model.new_cache();
    let mut out = Vec::new();
    let mut pending: Vec<TokenId> = prompt.to_vec();
    while out.len() < max_new && cache.len() + pending.len() <= model.context_len() {
        let fwd = model.forward(&pending, &mut cache)?;
        let dist = fwd.probs.last().expect("nonempty forward");
        let t = if greedy_mode { greedy(dist)? } else { sample(dist, rng)? };
        out.push(t);
        if stop.contains(&t) {
            break;
        }
        pending = alloc::vec![t];
        if prompt.len() + out.len() >= model.context_len() {
            break;
        }
    }
    Ok(out)
}
