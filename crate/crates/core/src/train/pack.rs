use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lm::{HiddenVec, TokenId, Transformer};
use crate::pacer::Scope;

use super::PromptTrace;

/// Sparse boolean attention mask: the sorted key rows of every query row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    keys: Vec<Vec<usize>>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn allowed(&self, q: usize) -> &[usize] {
        &self.keys[q]
    }

    pub fn get(&self, q: usize, k: usize) -> bool {
        self.keys[q].binary_search(&k).is_ok()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.len()).map(|q| (0..self.len()).map(|k| self.get(q, k)).collect()).collect()
    }

    pub fn causal(n: usize) -> Self {
        Self { keys: (0..n).map(|q| (0..=q).collect()).collect() }
    }

    pub(crate) fn into_keys(self) -> Vec<Vec<usize>> {
        self.keys
    }
}

/// Mask over `P + Σγ` rows: `P = prefix_lens.last()` causal context rows,
/// then each step's drafts.
///
/// A draft of step `s` sees context rows `0 .. prefix_lens[s]` and its own
/// step's earlier drafts (inclusive), narrowed by `scope`; `block` sets the
/// block partition used by [`Scope::LocalBlock`]. Context rows never see
/// drafts and drafts never see other steps.
pub fn build_attention_mask(prefix_lens: &[usize], gammas: &[usize], scope: Scope, block: usize) -> Result<AttentionMask> {
    if prefix_lens.len() != gammas.len() || prefix_lens.is_empty() {
        return Err(Error::arg("need one nonzero gamma per step and at least one step"));
    }
    if gammas.contains(&0) {
        return Err(Error::arg("every step needs at least one draft"));
    }
    if prefix_lens.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("steps must be ordered by strictly increasing prefix length"));
    }
    if scope == Scope::LocalBlock && block == 0 {
        return Err(Error::arg("block size must be at least 1"));
    }
    let p = *prefix_lens.last().expect("nonempty");
    let mut keys: Vec<Vec<usize>> = (0..p).map(|q| (0..=q).collect()).collect();
    for (&ctx, &g) in prefix_lens.iter().zip(gammas) {
        let start = keys.len();
        for j in 0..g {
            let row = start + j;
            let from = match scope {
                Scope::Full | Scope::LocalDraft => start,
                Scope::LocalBlock => start + j / block * block,
            };
            let mut k: Vec<usize> = if scope == Scope::Full { (0..ctx).collect() } else { Vec::new() };
            k.extend(from..=row);
            keys.push(k);
        }
    }
    Ok(AttentionMask { keys })
}

/// Where the pre-verifier's input hidden states come from.
#[derive(Debug, Clone, Copy)]
pub enum HiddenSource<'a> {
    /// Packed forward through the frozen draft model.
    Recompute(&'a Transformer),
    /// States recorded while collecting the data.
    Stored,
}

/// One packed training sequence holding several draft steps of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedExample {
    /// Committed tokens up to and including the last step's frontier token.
    pub prefix_tokens: Vec<TokenId>,
    /// Context rows visible to each step (committed length minus one).
    pub prefix_lens: Vec<usize>,
    pub drafts: Vec<Vec<TokenId>>,
    /// Label per draft row, in row order.
    pub labels: Vec<u8>,
    /// 1-based draft position per draft row.
    pub positions: Vec<usize>,
    pub mask: AttentionMask,
    /// Hidden state per pre-verifier row, when recorded.
    pub stored: Vec<HiddenVec>,
}

impl PackedExample {
    /// Number of context rows before the first draft row.
    pub fn context_rows(&self) -> usize {
        *self.prefix_lens.last().expect("nonempty")
    }

    pub fn num_rows(&self) -> usize {
        self.mask.len()
    }

    pub fn num_drafts(&self) -> usize {
        self.labels.len()
    }

    /// First row of every step.
    pub fn step_starts(&self) -> Vec<usize> {
        let mut at = self.context_rows();
        self.drafts
            .iter()
            .map(|d| {
                let s = at;
                at += d.len();
                s
            })
            .collect()
    }

    /// Row-major `rows × d` pre-verifier input states (before position
    /// embeddings).
    pub fn pv_hidden(&self, source: HiddenSource<'_>) -> Result<Vec<f32>> {
        match source {
            HiddenSource::Stored => {
                if self.stored.len() != self.num_rows() {
                    return Err(Error::arg("example has no stored hidden states"));
                }
                Ok(self.stored.iter().flat_map(|h| h.0.iter().copied()).collect())
            }
            HiddenSource::Recompute(draft) => self.recompute(draft),
        }
    }

    fn recompute(&self, draft: &Transformer) -> Result<Vec<f32>> {
        let mut tokens = self.prefix_tokens.clone();
        let mut positions: Vec<usize> = (0..tokens.len()).collect();
        let mut keys: Vec<Vec<usize>> = (0..tokens.len()).map(|q| (0..=q).collect()).collect();
        // row in the language-model sequence behind each draft's hidden
        let mut source_rows = Vec::with_capacity(self.num_drafts());
        for (&ctx, d) in self.prefix_lens.iter().zip(&self.drafts) {
            let m = ctx + 1;
            let start = tokens.len();
            source_rows.push(m - 1);
            for (j, &y) in d[..d.len() - 1].iter().enumerate() {
                tokens.push(y);
                positions.push(m + j);
                let mut k: Vec<usize> = (0..m).collect();
                k.extend(start..=start + j);
                keys.push(k);
                source_rows.push(start + j);
            }
        }
        let out = draft.forward_masked(&tokens, &positions, &|q| keys[q].clone())?;
        let ctx_rows = self.context_rows();
        let rows = (0..ctx_rows).chain(source_rows);
        Ok(rows.flat_map(|r| out.hidden[r].0.iter().copied()).collect())
    }
}

/// Packs the steps of `trace` into as few sequences as possible, splitting
/// at step boundaries when a sequence would exceed `max_rows` rows.
pub fn pack(trace: &PromptTrace, scope: Scope, block: usize, max_rows: usize) -> Result<Vec<PackedExample>> {
    let mut committed = trace.prompt.clone();
    committed.extend_from_slice(&trace.response);
    let mut out = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let mut drafted = 0;
    for (s, step) in trace.steps.iter().enumerate() {
        let rows = trace.prompt.len() + step.prefix_len - 1 + drafted + step.drafts.len();
        if !group.is_empty() && rows > max_rows {
            out.push(pack_group(trace, &committed, &group, scope, block)?);
            group.clear();
            drafted = 0;
        }
        group.push(s);
        drafted += step.drafts.len();
    }
    if !group.is_empty() {
        out.push(pack_group(trace, &committed, &group, scope, block)?);
    }
    Ok(out)
}

fn pack_group(trace: &PromptTrace, committed: &[TokenId], group: &[usize], scope: Scope, block: usize) -> Result<PackedExample> {
    let steps: Vec<_> = group.iter().map(|&s| &trace.steps[s]).collect();
    let prefix_lens: Vec<usize> = steps.iter().map(|s| trace.prompt.len() + s.prefix_len - 1).collect();
    let gammas: Vec<usize> = steps.iter().map(|s| s.drafts.len()).collect();
    let mask = build_attention_mask(&prefix_lens, &gammas, scope, block)?;
    let p = *prefix_lens.last().expect("nonempty group");
    if p + 1 > committed.len() || trace.context_hidden.len() < p {
        return Err(Error::arg(format!("trace too short for a prefix of {p} rows")));
    }
    let mut stored: Vec<HiddenVec> = trace.context_hidden[..p].to_vec();
    stored.extend(steps.iter().flat_map(|s| s.hidden.iter().cloned()));
    Ok(PackedExample {
        prefix_tokens: committed[..p + 1].to_vec(),
        prefix_lens,
        drafts: steps.iter().map(|s| s.drafts.clone()).collect(),
        labels: steps.iter().flat_map(|s| s.labels.iter().copied()).collect(),
        positions: steps.iter().flat_map(|s| 1..=s.drafts.len()).collect(),
        mask,
        stored,
    })
}
