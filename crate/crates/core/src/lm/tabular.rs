use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

use super::{check_forward_args, ForwardOutput, HiddenVec, KvCache, LanguageModel, ProbVec, TokenId};

/// Exact lookup-table model conditioned on the last `order` tokens.
///
/// Histories shorter than `order` are left-padded with token 0. The hidden
/// state of a position is the looked-up row itself (as `f32`), so its width
/// equals the vocabulary size.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    vocab: usize,
    order: usize,
    context_len: usize,
    rows: Vec<ProbVec>,
}

impl TabularModel {
    /// `rows[i]` is the distribution after the context whose base-`vocab`
    /// digits (oldest first) equal `i`.
    pub fn new(vocab: usize, order: usize, context_len: usize, rows: Vec<ProbVec>) -> Result<Self> {
        if vocab < 2 || order == 0 {
            return Err(Error::config("tabular model needs vocab >= 2 and order >= 1"));
        }
        let expected = vocab.pow(order as u32);
        if rows.len() != expected {
            return Err(Error::config(format!("expected {expected} rows, got {}", rows.len())));
        }
        if rows.iter().any(|r| r.len() != vocab) {
            return Err(Error::config("row width must equal vocabulary size"));
        }
        Ok(Self { vocab, order, context_len, rows })
    }

    pub fn uniform(vocab: usize, order: usize, context_len: usize) -> Self {
        let rows = (0..vocab.pow(order as u32)).map(|_| ProbVec::uniform(vocab)).collect();
        Self { vocab, order, context_len, rows }
    }

    /// Random rows; `sharpness` > 1 concentrates mass, `min_mass` keeps
    /// every entry strictly positive when nonzero.
    pub fn random<R: Rng + ?Sized>(
        vocab: usize,
        order: usize,
        context_len: usize,
        sharpness: f64,
        min_mass: f64,
        rng: &mut R,
    ) -> Self {
        let rows = (0..vocab.pow(order as u32))
            .map(|_| {
                let w: Vec<f64> = (0..vocab)
                    .map(|_| libm::pow(rng.gen::<f64>(), sharpness) + min_mass)
                    .collect();
                ProbVec::from_weights(w).expect("positive weights")
            })
            .collect();
        Self { vocab, order, context_len, rows }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &[ProbVec] {
        &self.rows
    }

    /// Distribution after the given history.
    pub fn dist_after(&self, history: &[TokenId]) -> &ProbVec {
        &self.rows[self.row_index(history)]
    }

    fn row_index(&self, history: &[TokenId]) -> usize {
        let mut idx = 0usize;
        for k in 0..self.order {
            // oldest-first digit k of the last `order` tokens
            let back = self.order - k;
            let t = if history.len() >= back { history[history.len() - back].index() } else { 0 };
            idx = idx * self.vocab + t;
        }
        idx
    }
}

impl LanguageModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn hidden_size(&self) -> usize {
        self.vocab
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn new_cache(&self) -> KvCache {
        KvCache::new(0, 0, self.context_len)
    }

    fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<ForwardOutput> {
        check_forward_args(tokens, cache, self.vocab)?;
        let mut history: Vec<TokenId> = cache.tokens().to_vec();
        let mut probs = Vec::with_capacity(tokens.len());
        let mut hidden = Vec::with_capacity(tokens.len());
        for &t in tokens {
            history.push(t);
            let row = &self.rows[self.row_index(&history)];
            hidden.push(HiddenVec(row.as_slice().iter().map(|&p| p as f32).collect()));
            probs.push(row.clone());
        }
        cache.commit(tokens.len(), tokens);
        Ok(ForwardOutput { probs, hidden })
    }
}
