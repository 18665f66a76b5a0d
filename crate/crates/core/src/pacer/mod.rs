//! Blockwise pre-verification, halting criteria, threshold growth and the
//! adaptive decode loop.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::specdec::DraftToken;

mod policy;
mod preverifier;

pub use policy::{
    ablation_grid, ablation_sweeps, pacer_generate, AblationTables, HeuristicKind, HeuristicPolicy, PacerPolicy,
};
pub use preverifier::{scope_keys, PositionEncoding, PreVerifier, PvInput, POS_INIT_STD};

/// Aggregation of block scores into a stop decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Stop when the block mean is at most the threshold.
    Mean,
    /// Stop when any score is below the threshold.
    Any,
    /// Stop when the newest score is below the threshold.
    Last,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Mean => "mean",
            Criterion::Any => "any",
            Criterion::Last => "last",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Criterion::Mean),
            "any" => Ok(Criterion::Any),
            "last" => Ok(Criterion::Last),
            _ => Err(Error::config(format!("unknown criterion {s:?}"))),
        }
    }
}

/// Which pre-verifier rows a draft row may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Accepted context and every earlier draft of the step.
    Full,
    /// Earlier drafts of the step only.
    LocalDraft,
    /// Earlier rows of the current block only.
    LocalBlock,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Full => "full",
            Scope::LocalDraft => "local-draft",
            Scope::LocalBlock => "local-block",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scope::Full),
            "local-draft" | "local_draft" => Ok(Scope::LocalDraft),
            "local-block" | "local_block" => Ok(Scope::LocalBlock),
            _ => Err(Error::config(format!("unknown scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaltConfig {
    /// Block size `b`.
    pub block: usize,
    /// Initial threshold `t0`, restored at every decode step.
    pub threshold: f64,
    /// Growth factor `ρ` applied after each continued round.
    pub growth: f64,
    /// Maximum rounds `K` per step.
    pub max_rounds: usize,
    pub criterion: Criterion,
    pub scope: Scope,
}

impl Default for HaltConfig {
    fn default() -> Self {
        Self { block: 4, threshold: 0.70, growth: 1.05, max_rounds: 8, criterion: Criterion::Mean, scope: Scope::Full }
    }
}

impl HaltConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.max_rounds == 0 {
            return Err(Error::config("block size and max rounds must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.growth >= 1.0) || !self.growth.is_finite() {
            return Err(Error::config(format!("growth factor {} is below 1", self.growth)));
        }
        Ok(())
    }

    /// Largest draft count one step can reach.
    pub fn max_drafts(&self) -> usize {
        self.block * self.max_rounds
    }
}

/// Outcome of one pre-verification round.
#[derive(Debug, Clone, PartialEq)]
pub struct HaltDecision {
    pub stop: bool,
    pub scores: Vec<f64>,
    pub aggregate: f64,
    pub threshold: f64,
}

/// Slack in the mean criterion's `mean ≤ t` test, so that a mean equal to
/// the threshold up to rounding stops.
pub const MEAN_TIE_EPS: f64 = 1e-12;

/// Applies `criterion` to block scores at threshold `t`.
pub fn halt_decision(scores: &[f64], t: f64, criterion: Criterion) -> Result<HaltDecision> {
    let (&last, _) = scores.split_last().ok_or_else(|| Error::arg("no block scores"))?;
    let (aggregate, stop) = match criterion {
        Criterion::Mean => {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            (mean, mean <= t + MEAN_TIE_EPS)
        }
        Criterion::Any => {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            (min, min < t)
        }
        Criterion::Last => (last, last < t),
    };
    Ok(HaltDecision { stop, scores: scores.to_vec(), aggregate, threshold: t })
}

/// `t · ρ`.
#[inline]
pub fn grow_threshold(t: f64, rho: f64) -> f64 {
    t * rho
}

/// Stops when the newest draft's own probability is below `threshold`.
pub fn heuristic_halt_prob(drafts: &[DraftToken], threshold: f64) -> bool {
    drafts.last().is_some_and(|d| d.dist.prob(d.token) < threshold)
}

/// Stops when the newest draft distribution's entropy exceeds
/// `threshold_bits`.
pub fn heuristic_halt_entropy(drafts: &[DraftToken], threshold_bits: f64) -> bool {
    drafts.last().is_some_and(|d| d.dist.entropy_bits() > threshold_bits)
}
