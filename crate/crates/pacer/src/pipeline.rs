//! The toy pipeline shared by the commands: train the model pair, sample
//! prompts, collect labeled drafts, fit the pre-verifier and decode.

use pacer_core::lm::{train_toy_lm, ByteTokenizer, LmTrainReport};
use pacer_core::metrics::{oracle_dynamic_run, run_prompts};
use pacer_core::pacer::{pacer_generate, HeuristicPolicy, PreVerifier};
use pacer_core::specdec::{generate, sd_generate};
use pacer_core::train::{
    collect_training_steps, generate_targets, pack, train_preverifier, HiddenSource, PackedExample, PvTrainReport,
};
use pacer_core::{DecodeMode, Generation, TokenId, Transformer};

use crate::config::{PolicyKind, RunConfig, SourceArg};
use crate::corpus::{heldout_start, load_prompts, sample_prompts};
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};

/// Trained target and draft sharing one tokenizer.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub tokenizer: ByteTokenizer,
    pub target: Transformer,
    pub draft: Transformer,
    pub target_report: LmTrainReport,
    pub draft_report: LmTrainReport,
}

pub fn train_pair(corpus: &str, cfg: &RunConfig) -> CliResult<ModelPair> {
    let tokenizer = ByteTokenizer::fit(corpus.as_bytes());
    let tokens = tokenizer.encode(corpus.as_bytes())?;
    let v = tokenizer.vocab_size();
    let (target, target_report) = train_toy_lm(&tokens, cfg.target_spec(v), &cfg.lm_train(0))?;
    let (draft, draft_report) = train_toy_lm(&tokens, cfg.draft_spec(v), &cfg.lm_train(1))?;
    Ok(ModelPair { tokenizer, target, draft, target_report, draft_report })
}

/// Prompts for labeled-data collection, from the training part of the corpus.
pub fn training_prompts(corpus: &str, tok: &ByteTokenizer, cfg: &RunConfig) -> CliResult<Vec<Vec<TokenId>>> {
    let tokens = tok.encode(corpus.as_bytes())?;
    let hi = heldout_start(tokens.len(), cfg.heldout_frac);
    let seed = pacer_core::rng::derive_seed(cfg.seed, 20);
    sample_prompts(&tokens, tok.token_of(b'\n'), 0, hi, cfg.num_prompts, cfg.prompt_len, cfg.response_len, seed)
}

/// Benchmark prompts: the prompt file if configured, otherwise samples from
/// the held-out corpus tail.
pub fn bench_prompts(corpus: &str, tok: &ByteTokenizer, cfg: &RunConfig) -> CliResult<Vec<Vec<TokenId>>> {
    if let Some(path) = &cfg.prompts {
        return load_prompts(path)?
            .iter()
            .map(|p| {
                tok.encode(p.as_bytes())
                    .map_err(|e| CliError::config(format!("prompt {p:?} cannot be tokenized: {e}")))
            })
            .collect();
    }
    let tokens = tok.encode(corpus.as_bytes())?;
    let lo = heldout_start(tokens.len(), cfg.heldout_frac);
    let seed = pacer_core::rng::derive_seed(cfg.seed, 21);
    sample_prompts(&tokens, tok.token_of(b'\n'), lo, tokens.len(), cfg.bench_prompts, cfg.prompt_len, cfg.max_len, seed)
}

/// Greedy target responses replayed against greedy draft proposals.
pub fn build_dataset(target: &Transformer, draft: &Transformer, prompts: &[Vec<TokenId>], cfg: &RunConfig) -> CliResult<Dataset> {
    let responses = generate_targets(target, prompts, cfg.response_len)?;
    let traces = prompts
        .iter()
        .zip(&responses)
        .map(|(p, r)| collect_training_steps(draft, p, r, cfg.gamma_train))
        .collect::<pacer_core::Result<Vec<_>>>()?;
    Ok(Dataset { hidden_size: draft.spec().d_model, gamma_train: cfg.gamma_train, traces })
}

/// Packs every trace; the last `pv_heldout_frac` of traces is held out.
pub fn split_examples(data: &Dataset, cfg: &RunConfig) -> CliResult<(Vec<PackedExample>, Vec<PackedExample>)> {
    let n_held = (data.traces.len() as f64 * cfg.pv_heldout_frac).round() as usize;
    let n_train = data.traces.len() - n_held;
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, t) in data.traces.iter().enumerate() {
        let ex = pack(t, cfg.scope_kind(), cfg.block_size, cfg.pv_max_rows)?;
        if i < n_train {
            train.extend(ex);
        } else {
            held.extend(ex);
        }
    }
    Ok((train, held))
}

/// Fresh pre-verifier sized for `draft` and the configured position table.
pub fn new_preverifier(draft: &Transformer, cfg: &RunConfig) -> CliResult<PreVerifier> {
    let seed = pacer_core::rng::derive_seed(cfg.seed, 13);
    let ctx = draft.spec().context_len + cfg.pv_max_positions;
    Ok(PreVerifier::new(draft.spec().d_model, cfg.pv_heads, ctx, cfg.pv_max_positions, cfg.encoding(), seed)?)
}

pub fn hidden_source<'a>(draft: &'a Transformer, cfg: &RunConfig) -> HiddenSource<'a> {
    match cfg.pv_source {
        SourceArg::Recompute => HiddenSource::Recompute(draft),
        SourceArg::Stored => HiddenSource::Stored,
    }
}

pub fn fit_preverifier(draft: &Transformer, data: &Dataset, cfg: &RunConfig) -> CliResult<(PreVerifier, PvTrainReport)> {
    if data.hidden_size != draft.spec().d_model {
        return Err(CliError::config(format!(
            "dataset hidden width {} does not match draft width {}",
            data.hidden_size,
            draft.spec().d_model
        )));
    }
    let (train, held) = split_examples(data, cfg)?;
    let pv = new_preverifier(draft, cfg)?;
    Ok(train_preverifier(pv, &train, &held, hidden_source(draft, cfg), &cfg.pv_train())?)
}

/// Decodes every prompt with the configured policy.
pub fn run_policy(
    cfg: &RunConfig,
    target: &Transformer,
    draft: &Transformer,
    pv: Option<&PreVerifier>,
    prompts: &[Vec<TokenId>],
) -> CliResult<Vec<Generation>> {
    let decode = cfg.decode();
    let halt = cfg.halt();
    let gens = match cfg.policy {
        PolicyKind::Fixed => run_prompts(prompts, &decode, |p, c| sd_generate(target, draft, p, c))?,
        PolicyKind::Pacer => {
            let pv = pv.ok_or_else(|| CliError::config("--policy pacer needs --preverifier"))?;
            run_prompts(prompts, &decode, |p, c| pacer_generate(target, draft, pv, p, &halt, c))?
        }
        PolicyKind::Prob => {
            let policy = HeuristicPolicy::prob(cfg.prob_threshold);
            run_prompts(prompts, &decode, |p, c| generate(target, draft, p, c, policy))?
        }
        PolicyKind::Entropy => {
            let policy = HeuristicPolicy::entropy(cfg.entropy_threshold);
            run_prompts(prompts, &decode, |p, c| generate(target, draft, p, c, policy))?
        }
        PolicyKind::Oracle => {
            if decode.mode != DecodeMode::Greedy {
                return Err(CliError::config("--policy oracle requires --mode greedy"));
            }
            run_prompts(prompts, &decode, |p, c| oracle_dynamic_run(target, draft, p, c, cfg.oracle_horizon))?
        }
    };
    Ok(gens)
}
