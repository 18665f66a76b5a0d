//! Decode-loop properties: rollback, greedy equivalence, sampled output law
//! and per-step accounting.

use pacer_core::lm::autoregressive_decode;
use pacer_core::pacer::{pacer_generate, PositionEncoding, HeuristicKind, HeuristicPolicy};
use pacer_core::rng::{stream, Stream};
use pacer_core::specdec::{generate, sd_generate, Drafter, Generation};
use pacer_core::{
    DecodeConfig, DecodeMode, HaltConfig, LanguageModel, ModelSpec, PreVerifier, TabularModel, TokenId, Transformer,
};
use proptest::prelude::*;

fn pair(v: usize, order: usize, seed: u64) -> (TabularModel, TabularModel) {
    let mut rng = stream(seed, Stream::Data);
    let t = TabularModel::random(v, order, 128, 2.0, 0.01, &mut rng);
    let d = TabularModel::random(v, order, 128, 2.0, 0.01, &mut rng);
    (t, d)
}

fn toks(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&t| TokenId(t)).collect()
}

fn check_accounting(g: &Generation, max_len: usize) {
    let emitted: usize = g.records.iter().map(|r| r.emitted).sum();
    assert_eq!(emitted, g.tokens.len());
    assert!(g.tokens.len() <= max_len);
    assert_eq!(g.step_tokens.concat(), g.tokens);
    for (i, r) in g.records.iter().enumerate() {
        assert_eq!(r.step, i);
        assert!(r.accepted <= r.gamma);
        assert_eq!(r.emitted, g.step_tokens[i].len());
        assert!(r.emitted <= r.accepted + 1);
        assert_eq!(r.draft_forwards, r.gamma);
        assert_eq!(r.target_forwards, 1);
    }
}

#[test]
fn rollback_matches_fresh_drafter() {
    let spec = ModelSpec::transformer(7, 2, 16, 2, 64, 3);
    let m = Transformer::new(spec).unwrap();
    let prefix = toks(&[1, 2, 3, 4]);
    let mut rng = stream(1, Stream::Draft);
    let mut d = Drafter::new(&m, &prefix).unwrap();
    let drafts = d.draft_run(5, 1, DecodeMode::Stochastic, &[], &mut rng).unwrap();
    // keep two drafts, then a correction token
    let mut committed = prefix.clone();
    committed.extend(drafts[..2].iter().map(|x| x.token));
    committed.push(TokenId(6));
    d.rollback(&committed).unwrap();
    let a = d.draft_run(3, 1, DecodeMode::Greedy, &[], &mut rng).unwrap();

    let mut fresh = Drafter::new(&m, &committed).unwrap();
    let b = fresh.draft_run(3, 1, DecodeMode::Greedy, &[], &mut rng).unwrap();
    assert_eq!(a.iter().map(|x| x.token).collect::<Vec<_>>(), b.iter().map(|x| x.token).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.dist.as_slice().iter().zip(y.dist.as_slice()) {
            assert!((p - q).abs() < 1e-6);
        }
    }
    assert_eq!(d.cache().tokens(), fresh.cache().tokens());
    assert_eq!(d.hidden().len(), fresh.hidden().len());
}

#[test]
fn greedy_equivalence_transformer() {
    let t = Transformer::new(ModelSpec::transformer(9, 2, 16, 2, 96, 1)).unwrap();
    let d = Transformer::new(ModelSpec::transformer(9, 1, 8, 2, 96, 2)).unwrap();
    let mut unused = stream(0, Stream::Verify);
    for p in 0..4u32 {
        let prompt = toks(&[p, (p + 3) % 9, 5]);
        let reference = autoregressive_decode(&t, &prompt, 40, &[], true, &mut unused).unwrap();
        for g in [1, 2, 5, 11] {
            let out = sd_generate(&t, &d, &prompt, &DecodeConfig::greedy(g, 40)).unwrap();
            assert_eq!(out.tokens, reference, "gamma {g}");
            check_accounting(&out, 40);
        }
    }
}

#[test]
fn sampled_output_matches_target_law() {
    // order-2 tables, first two outputs after a two-token prompt
    let (t, d) = pair(3, 2, 17);
    let prompt = toks(&[0, 2]);
    let mut exact = [[0.0f64; 3]; 3];
    for (a, pa) in t.dist_after(&prompt).as_slice().iter().enumerate() {
        let h = toks(&[2, a as u32]);
        for (b, pb) in t.dist_after(&h).as_slice().iter().enumerate() {
            exact[a][b] = pa * pb;
        }
    }
    let n = 20_000u64;
    let mut counts = [[0u64; 3]; 3];
    for seed in 0..n {
        let cfg = DecodeConfig { mode: DecodeMode::Stochastic, gamma: 3, max_len: 2, stop: vec![], seed };
        let g = sd_generate(&t, &d, &prompt, &cfg).unwrap();
        counts[g.tokens[0].index()][g.tokens[1].index()] += 1;
    }
    for a in 0..3 {
        for b in 0..3 {
            let p = exact[a][b];
            let f = counts[a][b] as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 5.0 * sd + 1e-9, "cell ({a},{b}): {f} vs {p}");
        }
    }
}

#[test]
fn stop_token_ends_generation() {
    let (t, d) = pair(4, 1, 5);
    let cfg = DecodeConfig { stop: vec![TokenId(2)], ..DecodeConfig::greedy(4, 60) };
    let g = sd_generate(&t, &d, &toks(&[1]), &cfg).unwrap();
    if let Some(i) = g.tokens.iter().position(|x| *x == TokenId(2)) {
        assert_eq!(i + 1, g.tokens.len());
    }
    check_accounting(&g, 60);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_equivalence_tabular(seed in 0u64..10_000, v in 2usize..7, gamma in 1usize..10, len in 1usize..40) {
        let (t, d) = pair(v, 1, seed);
        let prompt = toks(&[(seed % v as u64) as u32]);
        let mut unused = stream(0, Stream::Verify);
        let reference = autoregressive_decode(&t, &prompt, len, &[], true, &mut unused).unwrap();
        let g = sd_generate(&t, &d, &prompt, &DecodeConfig::greedy(gamma, len)).unwrap();
        prop_assert_eq!(&g.tokens, &reference);
        check_accounting(&g, len);
    }

    #[test]
    fn accounting_holds_for_every_policy(seed in 0u64..10_000, v in 2usize..6, len in 1usize..30) {
        let (t, d) = pair(v, 1, seed);
        let prompt = toks(&[0]);
        let cfg = DecodeConfig { mode: DecodeMode::Stochastic, gamma: 3, max_len: len, stop: vec![], seed };
        check_accounting(&sd_generate(&t, &d, &prompt, &cfg).unwrap(), len);

        let pv = PreVerifier::new(v, 1, 128, 16, PositionEncoding::Learned, seed).unwrap();
        let halt = HaltConfig { block: 2, max_rounds: 4, threshold: 0.5, ..HaltConfig::default() };
        let g = pacer_generate(&t, &d, &pv, &prompt, &halt, &cfg).unwrap();
        check_accounting(&g, len);
        for r in &g.records {
            prop_assert!(r.rounds <= 4);
            prop_assert_eq!(r.preverify_forwards, r.rounds);
        }

        let h = HeuristicPolicy { kind: HeuristicKind::Entropy(1.0), max_draft: 8 };
        check_accounting(&generate(&t, &d, &prompt, &cfg, h).unwrap(), len);
    }
}

#[test]
fn tabular_width_is_vocab() {
    let (t, _) = pair(5, 1, 0);
    assert_eq!(t.hidden_size(), 5);
}
