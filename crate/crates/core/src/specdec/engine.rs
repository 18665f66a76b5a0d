use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::{greedy, sample, HiddenVec, KvCache, LanguageModel, TokenId};
use crate::metrics::StepRecord;
use crate::rng::SessionRng;

use super::{verify, DecodeConfig, DecodeMode, DraftToken};

/// Draft model plus its session cache.
///
/// Forwards are lazy: tokens committed since the last run are fed together
/// with the first draft forward of the next run, so drafting `n` tokens
/// always costs exactly `n` draft forwards.
#[derive(Debug, Clone)]
pub struct Drafter<'m, D: ?Sized> {
    model: &'m D,
    cache: KvCache,
    hidden: Vec<HiddenVec>,
    pending: Vec<TokenId>,
}

impl<'m, D: LanguageModel + ?Sized> Drafter<'m, D> {
    pub fn new(model: &'m D, prefix: &[TokenId]) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::arg("prefix must be nonempty"));
        }
        Ok(Self { model, cache: model.new_cache(), hidden: Vec::new(), pending: prefix.to_vec() })
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    /// Hidden states of every cached position.
    pub fn hidden(&self) -> &[HiddenVec] {
        &self.hidden
    }

    /// Drafts up to `n` tokens with positions starting at `first_position`.
    ///
    /// Stops early right after a stop token.
    pub fn draft_run<R: Rng + ?Sized>(
        &mut self,
        n: usize,
        first_position: usize,
        mode: DecodeMode,
        stop: &[TokenId],
        rng: &mut R,
    ) -> Result<Vec<DraftToken>> {
        if n == 0 || first_position == 0 {
            return Err(Error::arg("draft_run needs n >= 1 and 1-based positions"));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let fwd = self.model.forward(&self.pending, &mut self.cache)?;
            self.hidden.extend(fwd.hidden);
            let dist = fwd.probs.into_iter().last().expect("nonempty forward");
            let token = match mode {
                DecodeMode::Greedy => greedy(&dist)?,
                DecodeMode::Stochastic => sample(&dist, rng)?,
            };
            let hidden = self.hidden.last().expect("nonempty forward").clone();
            out.push(DraftToken { token, dist, hidden, position: first_position + i });
            self.pending = alloc::vec![token];
            if stop.contains(&token) {
                break;
            }
        }
        Ok(out)
    }

    /// Rolls the cache back to the longest prefix agreeing with `committed`.
    pub fn rollback(&mut self, committed: &[TokenId]) -> Result<()> {
        let keep = self
            .cache
            .tokens()
            .iter()
            .zip(committed)
            .take_while(|(a, b)| a == b)
            .count()
            .min(committed.len().saturating_sub(1));
        self.cache.truncate(keep)?;
        self.hidden.truncate(keep);
        self.pending = committed[keep..].to_vec();
        Ok(())
    }
}

/// State visible to a policy while it decides whether to keep drafting.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'s> {
    pub committed: &'s [TokenId],
    /// Draft hidden states of committed tokens `1 .. m-1`; the state of the
    /// last committed token is the hidden of the first draft.
    pub context: &'s [HiddenVec],
    pub drafts: &'s [DraftToken],
}

/// Chooses how many tokens to draft in each decode step.
pub trait DraftPolicy {
    /// Starts a step; at most `cap` tokens may be drafted.
    fn begin_step(&mut self, committed: &[TokenId], cap: usize) -> Result<()>;

    /// Size of the next block after `rounds` blocks; `0` ends drafting.
    fn next_block(&mut self, rounds: usize, drafted: usize) -> usize;

    /// Inspects the block `view.drafts[start..]`; `true` keeps drafting.
    fn after_block(&mut self, view: &StepView<'_>, start: usize) -> Result<bool>;

    /// Ends a step once verification accepted `accepted` drafts.
    fn end_step(&mut self, accepted: usize) -> Result<()> {
        let _ = accepted;
        Ok(())
    }

    /// Pre-verifier forwards spent in the current step.
    fn preverify_forwards(&self) -> usize {
        0
    }
}

impl<P: DraftPolicy + ?Sized> DraftPolicy for &mut P {
    fn begin_step(&mut self, committed: &[TokenId], cap: usize) -> Result<()> {
        (**self).begin_step(committed, cap)
    }
    fn next_block(&mut self, rounds: usize, drafted: usize) -> usize {
        (**self).next_block(rounds, drafted)
    }
    fn after_block(&mut self, view: &StepView<'_>, start: usize) -> Result<bool> {
        (**self).after_block(view, start)
    }
    fn end_step(&mut self, accepted: usize) -> Result<()> {
        (**self).end_step(accepted)
    }
    fn preverify_forwards(&self) -> usize {
        (**self).preverify_forwards()
    }
}

/// Constant window `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPolicy {
    pub gamma: usize,
}

impl DraftPolicy for FixedPolicy {
    fn begin_step(&mut self, _: &[TokenId], _: usize) -> Result<()> {
        Ok(())
    }

    fn next_block(&mut self, rounds: usize, _: usize) -> usize {
        if rounds == 0 {
            self.gamma
        } else {
            0
        }
    }

    fn after_block(&mut self, _: &StepView<'_>, _: usize) -> Result<bool> {
        Ok(false)
    }
}

/// Output of a speculative decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated tokens, excluding the prompt.
    pub tokens: Vec<TokenId>,
    pub records: Vec<StepRecord>,
    /// Tokens emitted by each step.
    pub step_tokens: Vec<Vec<TokenId>>,
}

/// Speculative decoding loop with a pluggable draft-length policy.
///
/// The target cache always holds every committed token but the last, so
/// each step is one target forward over `[last committed] + drafts`. Per
/// step the window is capped so that the output never exceeds
/// `config.max_len` and the committed sequence never exceeds either
/// model's context. A step with window 0 is a plain target step.
pub fn generate<T, D, P>(
    target: &T,
    draft: &D,
    prompt: &[TokenId],
    config: &DecodeConfig,
    mut policy: P,
) -> Result<Generation>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
    P: DraftPolicy,
{
    if config.max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    if target.vocab_size() != draft.vocab_size() {
        return Err(Error::arg("target and draft vocabularies differ"));
    }
    let ctx = target.context_len().min(draft.context_len());
    if prompt.len() > ctx {
        return Err(Error::Capacity { needed: prompt.len(), capacity: ctx });
    }
    let mut rng = SessionRng::new(config.seed);
    let mut drafter = Drafter::new(draft, prompt)?;
    let mut t_cache = target.new_cache();
    let mut committed = prompt.to_vec();
    let mut gen = Generation { tokens: Vec::new(), records: Vec::new(), step_tokens: Vec::new() };

    while gen.tokens.len() < config.max_len && committed.len() < ctx {
        let m = committed.len();
        let cap = (config.max_len - gen.tokens.len() - 1).min(ctx - m - 1);
        policy.begin_step(&committed, cap)?;
        let mut drafts: Vec<DraftToken> = Vec::new();
        let mut rounds = 0;
        loop {
            let want = policy.next_block(rounds, drafts.len()).min(cap - drafts.len());
            if want == 0 {
                break;
            }
            let block = drafter.draft_run(want, drafts.len() + 1, config.mode, &config.stop, &mut rng.draft)?;
            let start = drafts.len();
            drafts.extend(block);
            rounds += 1;
            let hit_stop = drafts.last().is_some_and(|d| config.stop.contains(&d.token));
            let view = StepView { committed: &committed, context: &drafter.hidden()[..m - 1], drafts: &drafts };
            let keep_going = policy.after_block(&view, start)?;
            if !keep_going || hit_stop || drafts.len() >= cap {
                break;
            }
        }

        let feed: Vec<TokenId> = committed[t_cache.len()..]
            .iter()
            .copied()
            .chain(drafts.iter().map(|d| d.token))
            .collect();
        let fwd = target.forward(&feed, &mut t_cache)?;
        let p = &fwd.probs[fwd.probs.len() - drafts.len() - 1..];
        let outcome = verify(p, &drafts, config.mode, &mut rng.verify)?;
        t_cache.truncate(m + outcome.accepted)?;

        let mut emitted = outcome.emitted;
        let finished = match emitted.iter().position(|t| config.stop.contains(t)) {
            Some(i) => {
                emitted.truncate(i + 1);
                true
            }
            None => false,
        };
        committed.extend_from_slice(&emitted);
        gen.tokens.extend_from_slice(&emitted);
        drafter.rollback(&committed)?;
        policy.end_step(outcome.accepted)?;
        gen.records.push(StepRecord {
            step: gen.records.len(),
            gamma: drafts.len(),
            rounds,
            accepted: outcome.accepted,
            emitted: emitted.len(),
            draft_forwards: drafts.len(),
            target_forwards: 1,
            preverify_forwards: policy.preverify_forwards(),
        });
        gen.step_tokens.push(emitted);
        if finished {
            break;
        }
    }
    Ok(gen)
}

/// Vanilla speculative decoding with the fixed window `config.gamma`.
pub fn sd_generate<T, D>(target: &T, draft: &D, prompt: &[TokenId], config: &DecodeConfig) -> Result<Generation>
where
    T: LanguageModel + ?Sized,
    D: LanguageModel + ?Sized,
{
    config.validate()?;
    generate(target, draft, prompt, config, FixedPolicy { gamma: config.gamma })
}
