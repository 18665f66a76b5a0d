use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lm::TokenId;

/// Keys and values of one attention layer, row-major `len × width`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerKv {
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

/// Per-session attention cache.
///
/// Also records the tokens that produced each cached position, which is all
/// the state a tabular model needs. Caches are owned by exactly one
/// decoding session.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    capacity: usize,
    width: usize,
    len: usize,
    layers: Vec<LayerKv>,
    tokens: Vec<TokenId>,
}

impl KvCache {
    pub fn new(layers: usize, width: usize, capacity: usize) -> Self {
        Self {
            capacity,
            width,
            len: 0,
            layers: (0..layers).map(|_| LayerKv::default()).collect(),
            tokens: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Tokens recorded for the cached positions (empty for caches fed with
    /// hidden states rather than tokens).
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn layer(&self, l: usize) -> &LayerKv {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut LayerKv {
        &mut self.layers[l]
    }

    pub(crate) fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Marks `n` more positions as filled; layer rows must already be pushed.
    pub(crate) fn commit(&mut self, n: usize, tokens: &[TokenId]) {
        self.len += n;
        self.tokens.extend_from_slice(tokens);
        debug_assert!(self.layers.iter().all(|l| l.keys.len() == self.len * self.width));
    }

    /// Drops every position at index `n` and beyond.
    pub fn truncate(&mut self, n: usize) -> Result<()> {
        if n > self.len {
            return Err(Error::arg(format!("cannot truncate cache of {} to {n}", self.len)));
        }
        for l in &mut self.layers {
            l.keys.truncate(n * self.width);
            l.values.truncate(n * self.width);
        }
        self.tokens.truncate(n.min(self.tokens.len()));
        self.len = n;
        Ok(())
    }

    /// Copy of this cache truncated to `n` positions.
    pub fn truncated(&self, n: usize) -> Result<KvCache> {
        let mut c = self.clone();
        c.truncate(n)?;
        Ok(c)
    }
}
