//! Inference-aligned training data for the pre-verifier: target responses,
//! draft labeling, multi-step packing with a custom attention mask, and the
//! training loop.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lm::{autoregressive_decode, HiddenVec, LanguageModel, TokenId};
use crate::specdec::{DecodeMode, Drafter};

mod eval;
mod fit;
mod pack;

pub use eval::{auc, evaluate_classifier, packed_logits, predict, CalibrationBin, ClassifierReport};
pub use fit::{train_preverifier, PvTrainConfig, PvTrainReport};
pub use pack::{build_attention_mask, pack, AttentionMask, HiddenSource, PackedExample};

/// Default drafting window used when collecting labels.
pub const GAMMA_TRAIN: usize = 50;

/// One replayed draft step with exact-match labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDraftStep {
    /// Response tokens committed before this step.
    pub prefix_len: usize,
    pub drafts: Vec<TokenId>,
    /// `1` accepted, `0` rejected; a run of ones followed by zeros.
    pub labels: Vec<u8>,
    /// Draft hidden state behind each draft, as seen at inference.
    pub hidden: Vec<HiddenVec>,
}

impl LabeledDraftStep {
    pub fn accepted(&self) -> usize {
        self.labels.iter().take_while(|l| **l == 1).count()
    }
}

/// Everything collected for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTrace {
    pub prompt: Vec<TokenId>,
    /// Greedy target response.
    pub response: Vec<TokenId>,
    pub steps: Vec<LabeledDraftStep>,
    /// Draft hidden state of every prompt and response token.
    pub context_hidden: Vec<HiddenVec>,
}

/// Greedy target responses, one per prompt.
pub fn generate_targets<T: LanguageModel + ?Sized>(
    target: &T,
    prompts: &[Vec<TokenId>],
    max_len: usize,
) -> Result<Vec<Vec<TokenId>>> {
    if prompts.is_empty() {
        return Err(Error::arg("no prompts"));
    }
    let mut unused = crate::rng::stream(0, crate::rng::Stream::Verify);
    prompts
        .iter()
        .map(|p| autoregressive_decode(target, p, max_len, &[], true, &mut unused))
        .collect()
}

/// Exact-match labels: ones up to the first mismatch, zeros after.
pub fn label_drafts(drafts: &[TokenId], target: &[TokenId]) -> Result<Vec<u8>> {
    if target.len() < drafts.len() {
        return Err(Error::arg("target tokens do not cover every draft"));
    }
    let n = drafts.iter().zip(target).take_while(|(a, b)| a == b).count();
    Ok((0..drafts.len()).map(|i| u8::from(i < n)).collect())
}

/// Replays the decode loop against a fixed target `response`.
///
/// From each frontier the draft model greedily proposes up to `gamma_train`
/// tokens (fewer near the end of the response or the context); the
/// frontier then advances past the accepted run and one correction token.
pub fn collect_training_steps<D: LanguageModel + ?Sized>(
    draft: &D,
    prompt: &[TokenId],
    response: &[TokenId],
    gamma_train: usize,
) -> Result<PromptTrace> {
    if gamma_train == 0 {
        return Err(Error::config("gamma_train must be at least 1"));
    }
    let ctx = draft.context_len();
    let mut committed: Vec<TokenId> = prompt.to_vec();
    let mut drafter = Drafter::new(draft, prompt)?;
    let mut unused = crate::rng::stream(0, crate::rng::Stream::Draft);
    let mut steps = Vec::new();
    let mut f = 0;
    while f < response.len() && committed.len() < ctx {
        let m = committed.len();
        let n = gamma_train.min(response.len() - f).min(ctx - m - 1);
        let (drafts, hidden): (Vec<TokenId>, Vec<HiddenVec>) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            drafter
                .draft_run(n, 1, DecodeMode::Greedy, &[], &mut unused)?
                .into_iter()
                .map(|d| (d.token, d.hidden))
                .unzip()
        };
        let labels = label_drafts(&drafts, &response[f..])?;
        let accepted = labels.iter().take_while(|l| **l == 1).count();
        if !drafts.is_empty() {
            steps.push(LabeledDraftStep { prefix_len: f, drafts, labels, hidden });
        }
        let next = (f + accepted + 1).min(response.len());
        committed.extend_from_slice(&response[f..next]);
        f = next;
        drafter.rollback(&committed)?;
    }
    let mut full = prompt.to_vec();
    full.extend_from_slice(response);
    full.truncate(ctx);
    let mut cache = draft.new_cache();
    let context_hidden = draft.forward(&full, &mut cache)?.hidden;
    Ok(PromptTrace { prompt: prompt.to_vec(), response: response.to_vec(), steps, context_hidden })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ProbVec, TabularModel};
    use alloc::vec;

    fn t(v: &[u32]) -> Vec<TokenId> {
        v.iter().copied().map(TokenId).collect()
    }

    fn chain(v: usize, next: impl Fn(usize) -> usize) -> TabularModel {
        TabularModel::new(v, 1, 64, (0..v).map(|i| ProbVec::one_hot(v, next(i))).collect()).unwrap()
    }

    #[test]
    fn label_examples() {
        assert_eq!(label_drafts(&t(&[0, 1, 5, 6]), &t(&[0, 1, 2, 3])).unwrap(), vec![1, 1, 0, 0]);
        assert_eq!(label_drafts(&t(&[0, 1]), &t(&[0, 1, 2])).unwrap(), vec![1, 1]);
        assert_eq!(label_drafts(&t(&[3, 1]), &t(&[0, 1])).unwrap(), vec![0, 0]);
        assert!(label_drafts(&t(&[0, 1]), &t(&[0])).is_err());
    }

    #[test]
    fn forced_targets() {
        let m = chain(5, |i| (i + 1) % 5);
        let r = generate_targets(&m, &[t(&[2]), t(&[2])], 6).unwrap();
        assert_eq!(r[0], t(&[3, 4, 0, 1, 2, 3]));
        assert_eq!(r[0], r[1]);
    }

    #[test]
    fn identical_draft_is_one_step() {
        let m = chain(5, |i| (i + 1) % 5);
        let resp = generate_targets(&m, &[t(&[0])], 20).unwrap().remove(0);
        let tr = collect_training_steps(&m, &t(&[0]), &resp, 8).unwrap();
        assert!(tr.steps[0].labels.iter().all(|l| *l == 1));
        assert_eq!(tr.steps[1].prefix_len, 9);
    }

    #[test]
    fn useless_draft_advances_by_one() {
        let target = chain(5, |i| (i + 1) % 5);
        let draft = chain(5, |i| (i + 2) % 5);
        let resp = generate_targets(&target, &[t(&[0])], 12).unwrap().remove(0);
        let tr = collect_training_steps(&draft, &t(&[0]), &resp, 4).unwrap();
        assert_eq!(tr.steps.len(), 12);
        for (i, s) in tr.steps.iter().enumerate() {
            assert_eq!(s.prefix_len, i);
            assert!(s.labels.iter().all(|l| *l == 0));
            assert_eq!(s.labels.len(), 4.min(12 - i));
        }
    }
}
