//! Vanilla speculative decoding: drafting, parallel verification with the
//! stochastic acceptance rule, residual resampling and cache rollback.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::{greedy, sample, HiddenVec, ProbVec, TokenId};

mod engine;

pub use engine::{generate, sd_generate, DraftPolicy, Drafter, FixedPolicy, Generation, StepView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Stochastic,
    Greedy,
}

/// One speculated token.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftToken {
    pub token: TokenId,
    /// Draft distribution `q_i` the token was drawn from.
    pub dist: ProbVec,
    /// Draft hidden state that produced `dist`.
    pub hidden: HiddenVec,
    /// 1-based index within the current decode step.
    pub position: usize,
}

/// Result of verifying one draft.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub accepted: usize,
    /// Accepted drafts followed by exactly one correction or bonus token.
    pub emitted: Vec<TokenId>,
    pub all_accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Fixed window used by [`sd_generate`].
    pub gamma: usize,
    /// Maximum number of generated tokens.
    pub max_len: usize,
    pub stop: Vec<TokenId>,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { mode: DecodeMode::Stochastic, gamma: 4, max_len: 64, stop: Vec::new(), seed: 0 }
    }
}

impl DecodeConfig {
    pub fn greedy(gamma: usize, max_len: usize) -> Self {
        Self { mode: DecodeMode::Greedy, gamma, max_len, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::config("gamma must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be at least 1"));
        }
        Ok(())
    }
}

/// `min(1, p[y] / q[y])`.
pub fn accept_prob(p: &ProbVec, q: &ProbVec, y: TokenId) -> Result<f64> {
    if p.len() != q.len() || y.index() >= q.len() {
        return Err(Error::arg("distributions and token must share one vocabulary"));
    }
    let qy = q.prob(y);
    if qy <= 0.0 {
        return Err(Error::InvalidDraft { token: y.0 });
    }
    let py = p.prob(y);
    Ok(if py >= qy { 1.0 } else { py / qy })
}

/// `norm(max(0, p - q))`.
pub fn residual_dist(p: &ProbVec, q: &ProbVec) -> Result<ProbVec> {
    if p.len() != q.len() {
        return Err(Error::arg("distributions must share one vocabulary"));
    }
    let w: Vec<f64> = p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a - b).max(0.0)).collect();
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateResidual);
    }
    ProbVec::from_weights(w)
}

/// Verifies `drafts` against target distributions `p_1 .. p_{γ+1}`.
pub fn verify<R: Rng + ?Sized>(
    target: &[ProbVec],
    drafts: &[DraftToken],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<VerifyOutcome> {
    if target.len() != drafts.len() + 1 {
        return Err(Error::arg(format!(
            "{} target distributions for {} drafts",
            target.len(),
            drafts.len()
        )));
    }
    let mut emitted = Vec::with_capacity(drafts.len() + 1);
    for (i, d) in drafts.iter().enumerate() {
        let p = &target[i];
        let ok = match mode {
            DecodeMode::Greedy => greedy(p)? == d.token,
            DecodeMode::Stochastic => {
                let alpha = accept_prob(p, &d.dist, d.token)?;
                let r: f64 = rng.gen();
                r <= alpha
            }
        };
        if !ok {
            let extra = match mode {
                DecodeMode::Greedy => greedy(p)?,
                DecodeMode::Stochastic => sample(&residual_dist(p, &d.dist)?, rng)?,
            };
            emitted.push(extra);
            return Ok(VerifyOutcome { accepted: i, emitted, all_accepted: false });
        }
        emitted.push(d.token);
    }
    let last = &target[drafts.len()];
    let bonus = match mode {
        DecodeMode::Greedy => greedy(last)?,
        DecodeMode::Stochastic => sample(last, rng)?,
    };
    emitted.push(bonus);
    Ok(VerifyOutcome { accepted: drafts.len(), emitted, all_accepted: true })
}
