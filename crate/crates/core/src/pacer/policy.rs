use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lm::{HiddenVec, KvCache, LanguageModel, TokenId};
use crate::metrics::{all_records, run_prompts, simulate_cost, BenchReport, CostModel};
use crate::specdec::{generate, DecodeConfig, DraftPolicy, Generation, StepView};

use super::{grow_threshold, halt_decision, heuristic_halt_entropy, heuristic_halt_prob, HaltConfig, HaltDecision, PreVerifier};

/// Drafting policy driven by the pre-verifier.
///
/// Each step drafts blocks of `b` tokens. Every block is pre-verified
/// against the session cache; drafting continues while the criterion
/// passes at the current threshold, which grows by `ρ` per continued
/// round, up to `K` rounds. After verification the cache is cut back to
/// the accepted context rows.
#[derive(Debug, Clone)]
pub struct PacerPolicy<'p> {
    pv: &'p PreVerifier,
    config: HaltConfig,
    cache: KvCache,
    fed: usize,
    threshold: f64,
    forwards: usize,
    step: usize,
    record: bool,
    /// `(step, decision)` for every round, when recording is enabled.
    pub decisions: Vec<(usize, HaltDecision)>,
}

impl<'p> PacerPolicy<'p> {
    pub fn new(pv: &'p PreVerifier, config: HaltConfig) -> Result<Self> {
        config.validate()?;
        if config.max_drafts() > pv.max_positions() {
            return Err(Error::config(format!(
                "b·K = {} exceeds the position table of {}",
                config.max_drafts(),
                pv.max_positions()
            )));
        }
        Ok(Self {
            pv,
            config,
            cache: pv.new_cache(),
            fed: 0,
            threshold: config.threshold,
            forwards: 0,
            step: 0,
            record: false,
            decisions: Vec::new(),
        })
    }

    /// Keeps every [`HaltDecision`] in [`PacerPolicy::decisions`].
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }
}

impl DraftPolicy for PacerPolicy<'_> {
    fn begin_step(&mut self, _: &[TokenId], _: usize) -> Result<()> {
        self.threshold = self.config.threshold;
        self.forwards = 0;
        Ok(())
    }

    fn next_block(&mut self, rounds: usize, _: usize) -> usize {
        if rounds < self.config.max_rounds {
            self.config.block
        } else {
            0
        }
    }

    fn after_block(&mut self, view: &StepView<'_>, start: usize) -> Result<bool> {
        let context = &view.context[self.fed..];
        let block: Vec<HiddenVec> = view.drafts[start..].iter().map(|d| d.hidden.clone()).collect();
        let positions: Vec<usize> = view.drafts[start..].iter().map(|d| d.position).collect();
        let scores = self.pv.preverify_block(&mut self.cache, context, &block, &positions, self.config.scope)?;
        self.fed = view.context.len();
        self.forwards += 1;
        let decision = halt_decision(&scores, self.threshold, self.config.criterion)?;
        let stop = decision.stop;
        if self.record {
            self.decisions.push((self.step, decision));
        }
        if !stop {
            self.threshold = grow_threshold(self.threshold, self.config.growth);
        }
        Ok(!stop)
    }

    fn end_step(&mut self, _: usize) -> Result<()> {
        self.cache.truncate(self.fed.min(self.cache.len()))?;
        self.step += 1;
        Ok(())
    }

    fn preverify_forwards(&self) -> usize {
        self.forwards
    }
}

/// Adaptive speculative decoding with the pre-verifier `pv`.
pub fn pacer_generate<T, D>(
    target: &T,
    draft: &D,
    pv: &PreVerifier,
    prefix: &[TokenId],
    halt: &HaltConfig,
    decode: &DecodeConfig,
) -> Result<Generation>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    if pv.hidden_size() != draft.hidden_size() {
        return Err(Error::config(format!(
            "pre-verifier width {} does not match draft hidden width {}",
            pv.hidden_size(),
            draft.hidden_size()
        )));
    }
    generate(target, draft, prefix, decode, PacerPolicy::new(pv, *halt)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeuristicKind {
    /// Stop when `q[y]` of the newest draft is below the threshold.
    Prob(f64),
    /// Stop when the newest draft entropy (bits) exceeds the threshold.
    Entropy(f64),
}

/// Token-by-token drafting halted by a confidence heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicPolicy {
    pub kind: HeuristicKind,
    pub max_draft: usize,
}

impl HeuristicPolicy {
    pub const DEFAULT_PROB: f64 = 0.3;
    pub const DEFAULT_ENTROPY_BITS: f64 = 1.5;
    pub const DEFAULT_MAX_DRAFT: usize = 32;

    pub fn prob(threshold: f64) -> Self {
        Self { kind: HeuristicKind::Prob(threshold), max_draft: Self::DEFAULT_MAX_DRAFT }
    }

    pub fn entropy(threshold_bits: f64) -> Self {
        Self { kind: HeuristicKind::Entropy(threshold_bits), max_draft: Self::DEFAULT_MAX_DRAFT }
    }
}

impl DraftPolicy for HeuristicPolicy {
    fn begin_step(&mut self, _: &[TokenId], _: usize) -> Result<()> {
        Ok(())
    }

    fn next_block(&mut self, _: usize, drafted: usize) -> usize {
        usize::from(drafted < self.max_draft)
    }

    fn after_block(&mut self, view: &StepView<'_>, _: usize) -> Result<bool> {
        let stop = match self.kind {
            HeuristicKind::Prob(t) => heuristic_halt_prob(view.drafts, t),
            HeuristicKind::Entropy(t) => heuristic_halt_entropy(view.drafts, t),
        };
        Ok(!stop)
    }
}

/// Sweep results over block size, threshold and growth factor; each sweep
/// varies one knob of the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTables {
    pub block: Vec<(usize, BenchReport)>,
    pub threshold: Vec<(f64, BenchReport)>,
    pub growth: Vec<(f64, BenchReport)>,
}

/// `b ∈ 1..=7`, `t ∈ {0.50, 0.55, …, 0.80}`, `ρ ∈ {1.00, 1.01, …, 1.09}`.
pub fn ablation_grid() -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    (
        (1..=7).collect(),
        (0..=6).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        (0..=9).map(|i| (100 + i) as f64 / 100.0).collect(),
    )
}

/// Benchmarks PACER over the [`ablation_grid`].
pub fn ablation_sweeps<T, D>(
    target: &T,
    draft: &D,
    pv: &PreVerifier,
    prompts: &[Vec<TokenId>],
    base: &HaltConfig,
    decode: &DecodeConfig,
    cm: &CostModel,
) -> Result<AblationTables>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    let bench = |h: HaltConfig| -> Result<BenchReport> {
        let gens = run_prompts(prompts, decode, |p, c| pacer_generate(target, draft, pv, p, &h, c))?;
        simulate_cost(&all_records(&gens), cm)
    };
    let (bs, ts, rs) = ablation_grid();
    Ok(AblationTables {
        block: bs.iter().map(|&b| Ok((b, bench(HaltConfig { block: b, ..*base })?))).collect::<Result<_>>()?,
        threshold: ts.iter().map(|&t| Ok((t, bench(HaltConfig { threshold: t, ..*base })?))).collect::<Result<_>>()?,
        growth: rs.iter().map(|&r| Ok((r, bench(HaltConfig { growth: r, ..*base })?))).collect::<Result<_>>()?,
    })
}
