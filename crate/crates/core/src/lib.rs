//! Speculative decoding with adaptive draft lengths.
//!
//! A small draft model proposes tokens in blocks; a single-layer
//! pre-verification transformer scores each block from the draft model's
//! hidden states and decides whether drafting should continue. The target
//! model then verifies the whole draft in one parallel pass using the
//! standard rejection rule, so output distributions are unchanged.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, corpora and
//! the command-line driver live in the `pacer` crate.
#![no_std]

extern crate alloc;

pub mod autograd;
pub mod error;
pub mod lm;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pacer;
pub mod rng;
pub mod specdec;
pub mod train;

pub use error::{Error, Result};
pub use lm::{
    greedy, sample, ForwardOutput, HiddenVec, KvCache, LanguageModel, ModelKind, ModelSpec,
    ProbVec, TabularModel, TokenId, Transformer,
};
pub use metrics::{BenchReport, CostModel, StepRecord};
pub use pacer::{Criterion, HaltConfig, HaltDecision, PreVerifier, Scope};
pub use specdec::{DecodeConfig, DecodeMode, DraftToken, Generation, VerifyOutcome};
