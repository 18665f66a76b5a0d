//! The trained toy setup shared by the end-to-end criteria.

use std::sync::OnceLock;
use std::time::Instant;

use pacer::corpus::BUNDLED_CORPUS;
use pacer::dataset::Dataset;
use pacer::pipeline::{bench_prompts, build_dataset, fit_preverifier, split_examples, train_pair, training_prompts, ModelPair};
use pacer::RunConfig;
use pacer_core::pacer::PreVerifier;
use pacer_core::train::{PackedExample, PvTrainReport};
use pacer_core::TokenId;

pub struct Fixture {
    pub cfg: RunConfig,
    pub pair: ModelPair,
    pub data: Dataset,
    pub train: Vec<PackedExample>,
    pub heldout: Vec<PackedExample>,
    pub pv: PreVerifier,
    pub pv_report: PvTrainReport,
    /// Held-out benchmark prompts.
    pub prompts: Vec<Vec<TokenId>>,
    pub build_s: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

pub fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let t0 = Instant::now();
        let cfg = RunConfig::default();
        let pair = train_pair(BUNDLED_CORPUS, &cfg).expect("train models");
        let train_p = training_prompts(BUNDLED_CORPUS, &pair.tokenizer, &cfg).expect("prompts");
        let data = build_dataset(&pair.target, &pair.draft, &train_p, &cfg).expect("dataset");
        let (train, heldout) = split_examples(&data, &cfg).expect("pack");
        let (pv, pv_report) = fit_preverifier(&pair.draft, &data, &cfg).expect("train pre-verifier");
        let prompts = bench_prompts(BUNDLED_CORPUS, &pair.tokenizer, &cfg).expect("bench prompts");
        let build_s = t0.elapsed().as_secs_f64();
        eprintln!(
            "fixture: target heldout loss {:.4}, draft {:.4}, {} labeled positions, built in {build_s:.1}s",
            pair.target_report.heldout_loss,
            pair.draft_report.heldout_loss,
            data.positions()
        );
        Fixture { cfg, pair, data, train, heldout, pv, pv_report, prompts, build_s }
    })
}

/// The fixture, if some criterion has already built it.
pub fn built() -> Option<&'static Fixture> {
    FIXTURE.get()
}
