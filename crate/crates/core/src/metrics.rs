//! Forward-pass accounting, acceptance statistics, the maximum-acceptance
//! oracle, the latency cost model and fixed-window sweeps.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lm::{greedy, LanguageModel, TokenId};
use crate::rng::derive_seed;
use crate::specdec::{generate, sd_generate, DecodeConfig, DecodeMode, DraftPolicy, Generation, StepView};

/// Accounting for one decode step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    /// Window used (number of drafts verified).
    pub gamma: usize,
    /// Drafting rounds; 1 for fixed windows.
    pub rounds: usize,
    pub accepted: usize,
    /// Tokens appended to the output, normally `accepted + 1`.
    pub emitted: usize,
    pub draft_forwards: usize,
    pub target_forwards: usize,
    pub preverify_forwards: usize,
}

/// Milliseconds per forward pass of each model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub c_draft: f64,
    pub c_target: f64,
    pub c_preverify: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_draft: 16.52, c_target: 67.31, c_preverify: 1.81 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if [self.c_draft, self.c_target, self.c_preverify].iter().all(|c| *c > 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(Error::config("forward costs must be positive"))
        }
    }

    /// Same ratios, every cost multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { c_draft: self.c_draft * k, c_target: self.c_target * k, c_preverify: self.c_preverify * k }
    }
}

/// Aggregate statistics and simulated latency of a set of decode steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub steps: usize,
    pub tokens: usize,
    pub accepted: usize,
    pub draft_forwards: usize,
    pub target_forwards: usize,
    pub preverify_forwards: usize,
    pub tau: f64,
    pub mean_gamma: f64,
    pub time_ms: f64,
    pub tokens_per_s: f64,
    /// Relative to autoregressive decoding at one target forward per token.
    pub speedup: f64,
    pub share_draft: f64,
    pub share_target: f64,
    pub share_preverify: f64,
}

/// `Σ accepted / Σ target forwards`; zero when there are no target forwards.
pub fn compute_tau(records: &[StepRecord]) -> f64 {
    let target: usize = records.iter().map(|r| r.target_forwards).sum();
    if target == 0 {
        return 0.0;
    }
    records.iter().map(|r| r.accepted).sum::<usize>() as f64 / target as f64
}

/// Applies the cost model to `records`.
pub fn simulate_cost(records: &[StepRecord], cm: &CostModel) -> Result<BenchReport> {
    if records.is_empty() {
        return Err(Error::arg("no step records"));
    }
    let sum = |f: fn(&StepRecord) -> usize| records.iter().map(f).sum::<usize>();
    let draft_forwards = sum(|r| r.draft_forwards);
    let target_forwards = sum(|r| r.target_forwards);
    let preverify_forwards = sum(|r| r.preverify_forwards);
    let tokens = sum(|r| r.emitted);
    let t_draft = draft_forwards as f64 * cm.c_draft;
    let t_target = target_forwards as f64 * cm.c_target;
    let t_pv = preverify_forwards as f64 * cm.c_preverify;
    let time_ms = t_draft + t_target + t_pv;
    if !(time_ms > 0.0) {
        return Err(Error::arg("simulated time is zero"));
    }
    Ok(BenchReport {
        steps: records.len(),
        tokens,
        accepted: sum(|r| r.accepted),
        draft_forwards,
        target_forwards,
        preverify_forwards,
        tau: compute_tau(records),
        mean_gamma: sum(|r| r.gamma) as f64 / records.len() as f64,
        time_ms,
        tokens_per_s: tokens as f64 / (time_ms / 1000.0),
        speedup: tokens as f64 * cm.c_target / time_ms,
        share_draft: t_draft / time_ms,
        share_target: t_target / time_ms,
        share_preverify: t_pv / time_ms,
    })
}

/// Longest prefix of the draft's greedy continuation of `prefix` that
/// matches the target's greedy continuation, capped at `horizon` and by the
/// shared context.
pub fn oracle_max_accept<T, D>(target: &T, draft: &D, prefix: &[TokenId], horizon: usize) -> Result<usize>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    let ctx = target.context_len().min(draft.context_len());
    let mut tc = target.new_cache();
    let mut dc = draft.new_cache();
    let mut pt = target.forward(prefix, &mut tc)?.probs.pop().expect("nonempty forward");
    let mut pd = draft.forward(prefix, &mut dc)?.probs.pop().expect("nonempty forward");
    for l in 0..horizon {
        let a = greedy(&pt)?;
        if a != greedy(&pd)? {
            return Ok(l);
        }
        if l + 1 == horizon || tc.len() >= ctx {
            return Ok(l + 1);
        }
        pt = target.forward(&[a], &mut tc)?.probs.pop().expect("nonempty forward");
        pd = draft.forward(&[a], &mut dc)?.probs.pop().expect("nonempty forward");
    }
    Ok(0)
}

/// Drafts exactly `L_A^*` tokens per step using perfect foresight.
///
/// The foresight computation is not counted as forward passes.
pub struct OraclePolicy<'m, T: ?Sized, D: ?Sized> {
    target: &'m T,
    draft: &'m D,
    horizon: usize,
    planned: usize,
}

impl<'m, T: LanguageModel + ?Sized, D: LanguageModel + ?Sized> OraclePolicy<'m, T, D> {
    pub fn new(target: &'m T, draft: &'m D, horizon: usize) -> Self {
        Self { target, draft, horizon, planned: 0 }
    }
}

impl<T: LanguageModel + ?Sized, D: LanguageModel + ?Sized> DraftPolicy for OraclePolicy<'_, T, D> {
    fn begin_step(&mut self, committed: &[TokenId], cap: usize) -> Result<()> {
        let h = self.horizon.min(cap);
        self.planned = if h == 0 { 0 } else { oracle_max_accept(self.target, self.draft, committed, h)? };
        Ok(())
    }

    fn next_block(&mut self, rounds: usize, _: usize) -> usize {
        if rounds == 0 {
            self.planned
        } else {
            0
        }
    }

    fn after_block(&mut self, _: &StepView<'_>, _: usize) -> Result<bool> {
        Ok(false)
    }
}

/// Default foresight horizon of the oracle.
pub const ORACLE_HORIZON: usize = 64;

/// Greedy speculative decoding where each step drafts exactly `L_A^*`.
pub fn oracle_dynamic_run<T, D>(
    target: &T,
    draft: &D,
    prefix: &[TokenId],
    config: &DecodeConfig,
    horizon: usize,
) -> Result<Generation>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    if config.mode != DecodeMode::Greedy {
        return Err(Error::config("the oracle run is defined for greedy decoding only"));
    }
    generate(target, draft, prefix, config, OraclePolicy::new(target, draft, horizon))
}

/// Runs `run` on every prompt with a per-prompt seed derived from
/// `config.seed` and concatenates the step records.
pub fn run_prompts<F>(prompts: &[Vec<TokenId>], config: &DecodeConfig, mut run: F) -> Result<Vec<Generation>>
where
    F: FnMut(&[TokenId], &DecodeConfig) -> Result<Generation>,
{
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let cfg = DecodeConfig { seed: derive_seed(config.seed, i as u64), ..config.clone() };
            run(p, &cfg)
        })
        .collect()
}

/// All step records of a batch of generations.
pub fn all_records(gens: &[Generation]) -> Vec<StepRecord> {
    gens.iter().flat_map(|g| g.records.iter().copied()).collect()
}

/// One row per window of a fixed-γ sweep, with the best row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<(usize, BenchReport)>,
    /// Index into `rows` of the highest tokens/s (lowest γ on ties).
    pub best: usize,
}

impl SweepTable {
    pub fn best_row(&self) -> (usize, BenchReport) {
        self.rows[self.best]
    }
}

/// Fixed-window speculative decoding over `gammas` on every prompt.
pub fn sweep_fixed_gamma<T, D>(
    target: &T,
    draft: &D,
    prompts: &[Vec<TokenId>],
    gammas: &[usize],
    config: &DecodeConfig,
    cm: &CostModel,
) -> Result<SweepTable>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    if gammas.is_empty() {
        return Err(Error::arg("empty gamma range"));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let cfg = DecodeConfig { gamma: g, ..config.clone() };
        let gens = run_prompts(prompts, &cfg, |p, c| sd_generate(target, draft, p, c))?;
        rows.push((g, simulate_cost(&all_records(&gens), cm)?));
    }
    Ok(SweepTable { best: best_index(&rows, |r| r.1.tokens_per_s, |r| r.0)?, rows })
}

/// Index of the maximum `score`, ties broken by the lowest `key`.
pub fn best_index<R, K: PartialOrd>(rows: &[R], score: impl Fn(&R) -> f64, key: impl Fn(&R) -> K) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        let s = score(r);
        if !s.is_finite() {
            return Err(Error::Metric(format!("non-finite score in row {i}")));
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let sb = score(&rows[b]);
                if s > sb || (s == sb && key(r) < key(&rows[b])) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::arg("no rows"))
}
