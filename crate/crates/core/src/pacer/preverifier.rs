use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{KeyLists, Tape, Var};
use crate::error::{Error, Result};
use crate::lm::block::{lookup, BlockIds};
use crate::lm::{HiddenVec, KvCache, ModelKind, ModelSpec};
use crate::math::{layer_norm_row, sigmoid};
use crate::params::{ParamId, ParamStore};
use crate::rng::{stream, Stream};

use super::Scope;

/// How the draft-position table `e_j` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionEncoding {
    /// Trained jointly with the layer.
    Learned,
    /// Fixed sinusoids, excluded from training.
    Sinusoidal,
}

impl PositionEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionEncoding::Learned => "learned",
            PositionEncoding::Sinusoidal => "sinusoidal",
        }
    }
}

/// One input row of a cache-free pre-verifier forward.
#[derive(Debug, Clone, Copy)]
pub struct PvInput<'a> {
    pub hidden: &'a [f32],
    /// 1-based draft position; `None` for accepted-context rows.
    pub position: Option<usize>,
}

/// Single transformer layer over draft hidden states with a learned
/// draft-position table and a one-logit acceptance head.
///
/// Draft rows enter as `h_j + e_j`; accepted-context rows enter as the bare
/// hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct PreVerifier {
    spec: ModelSpec,
    max_positions: usize,
    encoding: PositionEncoding,
    params: ParamStore,
    ids: Ids,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    pos: ParamId,
    block: BlockIds,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Initial scale of the learned position table.
pub const POS_INIT_STD: f32 = 0.1;

fn sinusoid_table(n: usize, d: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; n * d];
    for p in 0..n {
        for i in 0..d {
            let freq = libm::powf(10_000.0, -((i / 2 * 2) as f32) / d as f32);
            let a = (p + 1) as f32 * freq;
            t[p * d + i] = if i % 2 == 0 { libm::sinf(a) } else { libm::cosf(a) };
        }
    }
    t
}

impl PreVerifier {
    /// Fresh layer for hidden width `d_model`. `spec.context_len` bounds
    /// the cached rows of one session.
    pub fn new(d_model: usize, heads: usize, context_len: usize, max_positions: usize, encoding: PositionEncoding, seed: u64) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::PreVerifier,
            vocab_size: 0,
            layers: 1,
            d_model,
            heads,
            context_len,
            seed,
            order: 0,
        };
        spec.validate()?;
        if max_positions == 0 {
            return Err(Error::config("position table must have at least one entry"));
        }
        let d = d_model;
        let mut rng = stream(seed, Stream::Init);
        let mut p = ParamStore::new();
        let pos = match encoding {
            PositionEncoding::Learned => p.normal("pv.pos_emb", vec![max_positions, d], POS_INIT_STD, &mut rng),
            PositionEncoding::Sinusoidal => p.push("pv.pos_emb", vec![max_positions, d], sinusoid_table(max_positions, d)),
        };
        let block = BlockIds::init(&mut p, "pv.h0", d, 1, &mut rng);
        let lnf_g = p.ones("pv.ln_f.g", vec![d]);
        let lnf_b = p.zeros("pv.ln_f.b", vec![d]);
        let head_w = p.normal("pv.head.w", vec![d, 1], 0.02, &mut rng);
        let head_b = p.zeros("pv.head.b", vec![1]);
        Ok(Self { spec, max_positions, encoding, params: p, ids: Ids { pos, block, lnf_g, lnf_b, head_w, head_b } })
    }

    pub fn from_params(spec: ModelSpec, max_positions: usize, encoding: PositionEncoding, params: ParamStore) -> Result<Self> {
        if spec.kind != ModelKind::PreVerifier {
            return Err(Error::config("spec kind must be preverifier"));
        }
        spec.validate()?;
        let d = spec.d_model;
        let ids = Ids {
            pos: lookup(&params, "pv.pos_emb", &[max_positions, d])?,
            block: BlockIds::resolve(&params, "pv.h0", d)?,
            lnf_g: lookup(&params, "pv.ln_f.g", &[d])?,
            lnf_b: lookup(&params, "pv.ln_f.b", &[d])?,
            head_w: lookup(&params, "pv.head.w", &[d, 1])?,
            head_b: lookup(&params, "pv.head.b", &[1])?,
        };
        Ok(Self { spec, max_positions, encoding, params, ids })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn hidden_size(&self) -> usize {
        self.spec.d_model
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    pub fn encoding(&self) -> PositionEncoding {
        self.encoding
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Tensors that training must leave untouched.
    pub fn frozen(&self) -> Vec<ParamId> {
        match self.encoding {
            PositionEncoding::Learned => Vec::new(),
            PositionEncoding::Sinusoidal => vec![self.ids.pos],
        }
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(1, self.spec.d_model, self.spec.context_len)
    }

    /// Sets the head to a constant output `sigmoid(bias)`.
    pub fn set_head_bias(&mut self, bias: f32) {
        self.params.get_mut(self.ids.head_w).iter_mut().for_each(|w| *w = 0.0);
        self.params.get_mut(self.ids.head_b)[0] = bias;
    }

    /// Zeroes the head so every score is exactly 0.5.
    pub fn zero_head(&mut self) {
        self.set_head_bias(0.0);
    }

    /// Zeroes the position table (position-embedding ablation).
    pub fn zero_positions(&mut self) {
        self.params.get_mut(self.ids.pos).iter_mut().for_each(|w| *w = 0.0);
    }

    fn input_rows(&self, rows: &[PvInput<'_>]) -> Result<Vec<f32>> {
        let d = self.spec.d_model;
        let table = self.params.get(self.ids.pos);
        let mut x = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.hidden.len() != d {
                return Err(Error::config(format!("hidden width {} does not match pre-verifier width {d}", r.hidden.len())));
            }
            match r.position {
                None => x.extend_from_slice(r.hidden),
                Some(p) => {
                    if p == 0 || p > self.max_positions {
                        return Err(Error::config(format!(
                            "draft position {p} outside the position table of {}",
                            self.max_positions
                        )));
                    }
                    let e = &table[(p - 1) * d..p * d];
                    x.extend(r.hidden.iter().zip(e).map(|(h, e)| h + e));
                }
            }
        }
        Ok(x)
    }

    fn run(&self, x: &mut [f32], cache: &mut KvCache, base: usize, allowed: &dyn Fn(usize) -> Vec<usize>) -> Vec<f32> {
        let d = self.spec.d_model;
        self.ids.block.forward_rows(&self.params, self.spec.heads, d, x, cache.layer_mut(0), base, allowed);
        let w = self.params.get(self.ids.head_w);
        let b = self.params.get(self.ids.head_b)[0];
        let mut a = vec![0.0f32; d];
        x.chunks(d)
            .map(|row| {
                layer_norm_row(row, self.params.get(self.ids.lnf_g), self.params.get(self.ids.lnf_b), &mut a);
                a.iter().zip(w).map(|(x, w)| x * w).sum::<f32>() + b
            })
            .collect()
    }

    /// Cache-free forward returning one logit per row.
    pub fn logits_masked(&self, rows: &[PvInput<'_>], allowed: &dyn Fn(usize) -> Vec<usize>) -> Result<Vec<f32>> {
        if rows.is_empty() {
            return Err(Error::arg("no rows"));
        }
        let mut x = self.input_rows(rows)?;
        let mut cache = KvCache::new(1, self.spec.d_model, rows.len());
        Ok(self.run(&mut x, &mut cache, 0, allowed))
    }

    /// Scores one block of drafts against the session cache.
    ///
    /// `context` holds accepted-context rows not yet in `cache`; they are
    /// appended first. Block rows follow with the given 1-based positions,
    /// which must continue the current step's drafts already in the cache.
    /// Returns one logit per block row.
    pub fn block_logits(
        &self,
        cache: &mut KvCache,
        context: &[HiddenVec],
        block: &[HiddenVec],
        positions: &[usize],
        scope: Scope,
    ) -> Result<Vec<f32>> {
        if block.is_empty() || block.len() != positions.len() {
            return Err(Error::arg("block and positions must be nonempty and equal length"));
        }
        if positions.windows(2).any(|w| w[1] != w[0] + 1) || positions[0] == 0 {
            return Err(Error::arg("positions must be consecutive 1-based indices"));
        }
        let base = cache.len();
        let block_start = base + context.len();
        let draft_start = block_start
            .checked_sub(positions[0] - 1)
            .ok_or_else(|| Error::arg("positions do not match cached drafts"))?;
        let needed = block_start + block.len();
        if needed > cache.capacity() {
            return Err(Error::Capacity { needed, capacity: cache.capacity() });
        }
        let mut rows: Vec<PvInput<'_>> = context.iter().map(|h| PvInput { hidden: &h.0, position: None }).collect();
        rows.extend(block.iter().zip(positions).map(|(h, &p)| PvInput { hidden: &h.0, position: Some(p) }));
        let mut x = self.input_rows(&rows)?;
        let allowed = |q: usize| scope_keys(scope, q, draft_start, block_start);
        let mut logits = self.run(&mut x, cache, base, &allowed);
        cache.commit(rows.len(), &[]);
        Ok(logits.split_off(context.len()))
    }

    /// [`PreVerifier::block_logits`] squashed to acceptance probabilities.
    pub fn preverify_block(
        &self,
        cache: &mut KvCache,
        context: &[HiddenVec],
        block: &[HiddenVec],
        positions: &[usize],
        scope: Scope,
    ) -> Result<Vec<f64>> {
        let logits = self.block_logits(cache, context, block, positions, scope)?;
        Ok(logits.into_iter().map(|l| sigmoid(l) as f64).collect())
    }

    /// Differentiable forward; `hidden` is an `n × d` constant, `positions`
    /// are 0-based table rows (`None` for context rows). Returns `n × 1`
    /// logits.
    pub fn logits_on_tape(&self, tape: &mut Tape, vars: &[Var], hidden: Var, positions: Vec<Option<u32>>, keys: KeyLists) -> Var {
        let e = tape.gather(vars[self.ids.pos], positions);
        let x = tape.add(hidden, e);
        let x = self.ids.block.forward_tape(tape, vars, self.spec.heads, x, keys);
        let x = tape.layer_norm(x, vars[self.ids.lnf_g], vars[self.ids.lnf_b]);
        tape.linear(x, vars[self.ids.head_w], vars[self.ids.head_b])
    }
}

/// Key rows visible to row `q` under `scope`, for a step whose drafts start
/// at row `draft_start` and whose current block starts at `block_start`.
pub fn scope_keys(scope: Scope, q: usize, draft_start: usize, block_start: usize) -> Vec<usize> {
    if q < draft_start {
        return (0..=q).collect();
    }
    let from = match scope {
        Scope::Full => 0,
        Scope::LocalDraft => draft_start,
        Scope::LocalBlock => block_start.min(q),
    };
    (from..=q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normal;

    fn pv() -> PreVerifier {
        PreVerifier::new(8, 2, 32, 16, PositionEncoding::Learned, 7).unwrap()
    }

    fn hiddens(n: usize, seed: u64) -> Vec<HiddenVec> {
        let mut rng = stream(seed, Stream::Data);
        (0..n).map(|_| HiddenVec((0..8).map(|_| normal(&mut rng)).collect())).collect()
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut p = pv();
        p.zero_head();
        let mut c = p.new_cache();
        let s = p.preverify_block(&mut c, &hiddens(3, 1), &hiddens(4, 2), &[1, 2, 3, 4], Scope::Full).unwrap();
        assert_eq!(s, vec![0.5; 4]);
        assert_eq!(c.len(), 7);
    }

    #[test]
    fn positions_matter_unless_table_is_zero() {
        let mut p = pv();
        let h = hiddens(2, 3);
        let rows = |o: usize| {
            [PvInput { hidden: &h[0].0, position: Some(1 + o) }, PvInput { hidden: &h[1].0, position: Some(2 + o) }]
        };
        let causal = |q: usize| (0..=q).collect();
        assert_ne!(p.logits_masked(&rows(0), &causal).unwrap(), p.logits_masked(&rows(2), &causal).unwrap());
        p.zero_positions();
        assert_eq!(p.logits_masked(&rows(0), &causal).unwrap(), p.logits_masked(&rows(2), &causal).unwrap());
    }

    #[test]
    fn cached_blocks_equal_masked_forward() {
        let p = pv();
        let ctx = hiddens(3, 4);
        let drafts = hiddens(4, 5);
        for scope in [Scope::Full, Scope::LocalDraft, Scope::LocalBlock] {
            let mut c = p.new_cache();
            let mut got = p.block_logits(&mut c, &ctx, &drafts[..2], &[1, 2], scope).unwrap();
            got.extend(p.block_logits(&mut c, &[], &drafts[2..], &[3, 4], scope).unwrap());
            let mut rows: Vec<PvInput<'_>> = ctx.iter().map(|h| PvInput { hidden: &h.0, position: None }).collect();
            rows.extend(drafts.iter().enumerate().map(|(i, h)| PvInput { hidden: &h.0, position: Some(i + 1) }));
            let want = p
                .logits_masked(&rows, &|q| scope_keys(scope, q, 3, if q >= 5 { 5 } else { 3 }))
                .unwrap();
            assert_eq!(got, want[3..].to_vec(), "{scope:?}");
        }
    }

    #[test]
    fn position_beyond_table_is_config_error() {
        let p = pv();
        let mut c = p.new_cache();
        let h = hiddens(1, 6);
        let r = p.logits_masked(&[PvInput { hidden: &h[0].0, position: Some(17) }], &|q| (0..=q).collect());
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(p.block_logits(&mut c, &[], &h, &[1], Scope::Full).is_ok());
    }

    #[test]
    fn params_round_trip() {
        let p = pv();
        let q = PreVerifier::from_params(*p.spec(), 16, p.encoding(), p.params().clone()).unwrap();
        assert_eq!(p, q);
    }
}
