//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the verdict lines are always
//! printed; the process exits nonzero if any criterion fails.

mod exact;
mod fixture;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use pacer::config::PolicyKind;
use pacer::corpus::BUNDLED_CORPUS;
use pacer::pipeline::{bench_prompts, hidden_source, new_preverifier, run_policy};
use pacer_core::lm::autoregressive_decode;
use pacer_core::metrics::{
    all_records, compute_tau, oracle_dynamic_run, run_prompts, simulate_cost, sweep_fixed_gamma, ORACLE_HORIZON,
};
use pacer_core::pacer::{
    grow_threshold, halt_decision, pacer_generate, PacerPolicy, PositionEncoding, PreVerifier, PvInput, MEAN_TIE_EPS,
};
use pacer_core::rng::{stream, Stream};
use pacer_core::specdec::{generate, sd_generate, DraftPolicy, StepView};
use pacer_core::train::{auc, pack, packed_logits, predict, HiddenSource};
use pacer_core::{
    CostModel, Criterion, DecodeConfig, DecodeMode, HaltConfig, HiddenVec, Scope, StepRecord, TabularModel, TokenId,
};
use rand::seq::SliceRandom;
use rand::Rng;

use exact::{law_diff, marginals, max_abs_diff, sd_law, target_law, Rule};
use fixture::fixture;

const C1_TOL: f64 = 1e-10;
const C1_MC_Z: f64 = 5.0;
const C3_TOL: f32 = 1e-5;
const C4_SPEEDUP: f64 = 1.46;
const C4_TOL: f64 = 0.01;
const C5_TAU: f64 = 7.38;
const C5_TOL: f64 = 0.01;
const C7_MIN_POSITIONS: usize = 2000;
const C7_MIN_AUC: f64 = 0.75;
const C7_NULL_BAND: f64 = 0.05;
const C8_RATIO: f64 = 0.95;
const C9_REL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sigma_ok(freq: f64, p: f64, n: f64, z: f64) -> (bool, f64) {
    let sd = (p * (1.0 - p) / n).sqrt();
    if sd == 0.0 {
        return (freq == p, 0.0);
    }
    let s = (freq - p).abs() / sd;
    (s < z, s)
}

fn c1_lossless_exact() -> Outcome {
    let start = Instant::now();
    let pairs = 24;
    let mut worst = 0.0f64;
    let mut worst_joint = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut mc_ok = true;
    let mut gammas_seen = std::collections::BTreeSet::new();
    for k in 0..pairs {
        let v = 2 + (k % 4) as usize;
        let len = if v <= 3 { 5 } else { 4 };
        let mut rng = stream(1000 + k, Stream::Data);
        let min_mass = if k % 2 == 0 { 0.02 } else { 0.0 };
        let target = TabularModel::random(v, 1, 64, 2.0, min_mass, &mut rng);
        let draft = TabularModel::random(v, 1, 64, 2.0, 0.02, &mut rng);
        let prompt = vec![TokenId(rng.gen_range(0..v as u32))];
        let reference = target_law(&target, &prompt, len);
        let ref_m = marginals(&reference, v, len);
        let pv = PreVerifier::new(v, 1, 64, 8, PositionEncoding::Learned, 500 + k).expect("pv");
        let halt = HaltConfig { block: 2, threshold: 0.5, growth: 1.05, max_rounds: 4, ..HaltConfig::default() };
        let rules = [
            (Some(1), Rule::Fixed(1)),
            (Some(2), Rule::Fixed(2)),
            (Some(4), Rule::Fixed(4)),
            (None, Rule::Pacer { pv: &pv, block: 2, max_rounds: 4, t0: 0.5, rho: 1.05 }),
        ];
        for (gamma, rule) in &rules {
            let law = sd_law(&target, &draft, &prompt, len, rule);
            worst = worst.max(max_abs_diff(&marginals(&law, v, len), &ref_m));
            worst_joint = worst_joint.max(law_diff(&law, &reference));
            // the engine itself, sampled, must match the same marginals
            if k < 6 {
                let n = 3000;
                let mut counts = vec![vec![0usize; v]; len];
                for s in 0..n {
                    let cfg = DecodeConfig { mode: DecodeMode::Stochastic, gamma: gamma.unwrap_or(1), max_len: len, stop: vec![], seed: 7 * s + k };
                    let g = match gamma {
                        Some(_) => sd_generate(&target, &draft, &prompt, &cfg),
                        None => pacer_generate(&target, &draft, &pv, &prompt, &halt, &cfg),
                    }
                    .expect("decode");
                    if gamma.is_none() {
                        gammas_seen.extend(g.records.iter().map(|r| r.gamma));
                    }
                    for (i, t) in g.tokens.iter().enumerate() {
                        counts[i][t.index()] += 1;
                    }
                }
                for (i, row) in counts.iter().enumerate() {
                    for (x, c) in row.iter().enumerate() {
                        let (ok, z) = sigma_ok(*c as f64 / n as f64, ref_m[i][x], n as f64, C1_MC_Z);
                        mc_ok &= ok;
                        worst_z = worst_z.max(z);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < C1_TOL && worst_joint < C1_TOL && mc_ok && gammas_seen.len() > 1 && secs < 60.0,
        format!(
            "{pairs} pairs, gamma in {{1,2,4}} + PACER; max marginal diff {worst:.2e}, max joint diff {worst_joint:.2e} (tol {C1_TOL:.0e}); \
             engine Monte Carlo max |z| {worst_z:.2} (< {C1_MC_Z}); PACER windows seen {gammas_seen:?}; {secs:.1}s"
        ),
    )
}

fn c2_greedy_equivalence() -> Outcome {
    let f = fixture();
    let start = Instant::now();
    let mut cfg = f.cfg.clone();
    cfg.bench_prompts = 100;
    cfg.max_len = 48;
    cfg.seed = 77;
    let prompts = bench_prompts(BUNDLED_CORPUS, &f.pair.tokenizer, &cfg).expect("prompts");
    let (t, d) = (&f.pair.target, &f.pair.draft);
    let untrained = new_preverifier(d, &cfg).expect("pv");
    let halt = cfg.halt();
    let mut unused = stream(0, Stream::Verify);
    let mut mismatches = 0;
    let mut runs = 0;
    for (i, p) in prompts.iter().enumerate() {
        let reference = autoregressive_decode(t, p, cfg.max_len, &[], true, &mut unused).expect("greedy");
        let dc = DecodeConfig { seed: i as u64, ..DecodeConfig::greedy(4, cfg.max_len) };
        let mut outs = Vec::new();
        for g in [1, 4, 9] {
            outs.push(sd_generate(t, d, p, &DecodeConfig { gamma: g, ..dc.clone() }).expect("sd").tokens);
        }
        outs.push(pacer_generate(t, d, &f.pv, p, &halt, &dc).expect("pacer").tokens);
        outs.push(pacer_generate(t, d, &untrained, p, &halt, &dc).expect("pacer").tokens);
        outs.push(oracle_dynamic_run(t, d, p, &dc, ORACLE_HORIZON).expect("oracle").tokens);
        runs += outs.len();
        mismatches += outs.iter().filter(|o| **o != reference).count();
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && prompts.len() == 100 && secs < 120.0,
        format!(
            "{} prompts x (fixed 1/4/9, PACER trained, PACER untrained, oracle): {mismatches} of {runs} runs differ from target greedy; {secs:.1}s",
            prompts.len()
        ),
    )
}

fn c3_packing_fidelity() -> Outcome {
    let f = fixture();
    let d = f.pair.draft.spec().d_model;
    let b = f.cfg.block_size;
    let mut examples = 0;
    let mut rows = 0;
    let mut worst = 0.0f32;
    let mut state_gap = 0.0f32;
    for scope in [Scope::Full, Scope::LocalDraft, Scope::LocalBlock] {
        for trace in &f.data.traces {
            for ex in pack(trace, scope, b, f.cfg.pv_max_rows).expect("pack") {
                let hidden = ex.pv_hidden(HiddenSource::Recompute(&f.pair.draft)).expect("recompute");
                let packed = packed_logits(&f.pv, &ex, &hidden, d).expect("packed forward");
                for (r, h) in ex.stored.iter().enumerate() {
                    for (a, b) in h.0.iter().zip(&hidden[r * d..(r + 1) * d]) {
                        state_gap = state_gap.max((a - b).abs());
                    }
                }
                let starts = ex.step_starts();
                for (s, drafts) in ex.drafts.iter().enumerate() {
                    // unpacked: the inference path, block by block, from stored states
                    let ctx: Vec<HiddenVec> = ex.stored[..ex.prefix_lens[s]].to_vec();
                    let mut cache = f.pv.new_cache();
                    let mut j = 0;
                    while j < drafts.len() {
                        let e = (j + b).min(drafts.len());
                        let block: Vec<HiddenVec> = ex.stored[starts[s] + j..starts[s] + e].to_vec();
                        let pos: Vec<usize> = (j + 1..=e).collect();
                        let c = if j == 0 { &ctx[..] } else { &[][..] };
                        let un = f.pv.block_logits(&mut cache, c, &block, &pos, scope).expect("block");
                        for (r, l) in un.iter().enumerate() {
                            worst = worst.max((l - packed[starts[s] + j + r]).abs());
                            rows += 1;
                        }
                        j = e;
                    }
                }
                examples += 1;
            }
        }
    }
    outcome(
        examples >= 50 && worst < C3_TOL,
        format!("{examples} packed examples over 3 scopes, {rows} draft rows; max |packed - unpacked| logit {worst:.2e} (tol {C3_TOL:.0e}); recomputed vs stored states differ by {state_gap:.2e}"),
    )
}

/// Evenly spreads `total` over `n` records.
fn spread(n: usize, total: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| total / n + usize::from(i < total % n))
}

fn c4_cost_model() -> Outcome {
    let cm = CostModel::default();
    let (base_draft, base_target, accepted) = (27_423usize, 3_047usize, 22_487usize);
    let (dyn_draft, dyn_target) = (base_draft - 4_837, 1_150usize);
    let tokens = accepted + base_target;
    let base: Vec<StepRecord> = spread(base_target, base_draft)
        .zip(spread(base_target, accepted))
        .map(|(g, n)| StepRecord { gamma: g, rounds: 1, accepted: n, emitted: n + 1, draft_forwards: g, target_forwards: 1, ..StepRecord::default() })
        .collect();
    // same output, fewer passes; counts as reported, per-step split is arbitrary
    let dynamic: Vec<StepRecord> = spread(dyn_target, dyn_draft)
        .zip(spread(dyn_target, tokens))
        .map(|(g, e)| StepRecord { gamma: g, rounds: 1, accepted: g.min(e - 1), emitted: e, draft_forwards: g, target_forwards: 1, ..StepRecord::default() })
        .collect();
    let rb = simulate_cost(&base, &cm).expect("cost");
    let rd = simulate_cost(&dynamic, &cm).expect("cost");
    let ratio = rd.speedup / rb.speedup;
    outcome(
        (ratio - C4_SPEEDUP).abs() <= C4_TOL && rb.tokens == rd.tokens && rb.draft_forwards == base_draft && rd.draft_forwards == dyn_draft,
        format!(
            "baseline {base_draft}/{base_target} -> {:.1} ms, dynamic {dyn_draft}/{dyn_target} -> {:.1} ms at {tokens} tokens; speedup {ratio:.4} (target {C4_SPEEDUP} +- {C4_TOL})",
            rb.time_ms, rd.time_ms
        ),
    )
}

fn c5_tau() -> Outcome {
    let records: Vec<StepRecord> = spread(3_047, 22_487)
        .zip(spread(3_047, 27_423))
        .map(|(n, g)| StepRecord { gamma: g, rounds: 1, accepted: n, emitted: n + 1, draft_forwards: g, target_forwards: 1, ..StepRecord::default() })
        .collect();
    let tau = compute_tau(&records);
    outcome(
        (tau - C5_TAU).abs() <= C5_TOL,
        format!("3047 steps, 22487 accepted drafts: tau = {tau:.4} (target {C5_TAU} +- {C5_TOL})"),
    )
}

fn c6_oracle_dominance() -> Outcome {
    let f = fixture();
    let start = Instant::now();
    let cm = f.cfg.cost_model();
    let dc = f.cfg.decode();
    let sweep = sweep_fixed_gamma(&f.pair.target, &f.pair.draft, &f.prompts, &f.cfg.gammas(), &dc, &cm).expect("sweep");
    let (best_g, best) = sweep.best_row();
    let min_time = sweep.rows.iter().map(|r| r.1.time_ms).fold(f64::INFINITY, f64::min);
    let gens = run_prompts(&f.prompts, &dc, |p, c| oracle_dynamic_run(&f.pair.target, &f.pair.draft, p, c, ORACLE_HORIZON)).expect("oracle");
    let recs = all_records(&gens);
    let oracle = simulate_cost(&recs, &cm).expect("cost");
    let n = recs.len() as f64;
    let mean = recs.iter().map(|r| r.gamma as f64).sum::<f64>() / n;
    let var = recs.iter().map(|r| (r.gamma as f64 - mean).powi(2)).sum::<f64>() / n;
    let strict = oracle.time_ms < min_time;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        oracle.time_ms <= min_time && (var == 0.0 || strict) && oracle.tokens == best.tokens && secs < 300.0,
        format!(
            "oracle {:.1} ms ({} draft / {} target fwd, {:.2} tok/s) vs best fixed gamma={best_g} {:.1} ms ({:.2} tok/s); L_A* mean {mean:.2} var {var:.2}; {secs:.1}s",
            oracle.time_ms, oracle.draft_forwards, oracle.target_forwards, oracle.tokens_per_s, best.time_ms, best.tokens_per_s
        ),
    )
}

fn c7_learnability() -> Outcome {
    let f = fixture();
    let positions: usize = f.train.iter().map(|e| e.num_drafts()).sum();
    let (scores, labels, _) = predict(&f.pv, &f.heldout, hidden_source(&f.pair.draft, &f.cfg)).expect("predict");
    let a = auc(&scores, &labels).expect("auc");
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut stream(4242, Stream::Shuffle));
    let null = auc(&scores, &shuffled).expect("auc");
    outcome(
        positions >= C7_MIN_POSITIONS && a >= C7_MIN_AUC && (null - 0.5).abs() <= C7_NULL_BAND,
        format!(
            "{positions} training positions, {} held-out, final train loss {:.4}; AUC {a:.4} (>= {C7_MIN_AUC}); permuted-label AUC {null:.4} (0.5 +- {C7_NULL_BAND})",
            labels.len(),
            f.pv_report.final_loss
        ),
    )
}

fn c8_end_to_end() -> Outcome {
    let f = fixture();
    let cm = f.cfg.cost_model();
    let sweep = sweep_fixed_gamma(&f.pair.target, &f.pair.draft, &f.prompts, &f.cfg.gammas(), &f.cfg.decode(), &cm).expect("sweep");
    let (best_g, best) = sweep.best_row();
    let mut cfg = f.cfg.clone();
    cfg.policy = PolicyKind::Pacer;
    let default_halt = cfg.halt() == HaltConfig::default();
    let gens = run_policy(&cfg, &f.pair.target, &f.pair.draft, Some(&f.pv), &f.prompts).expect("pacer");
    let r = simulate_cost(&all_records(&gens), &cm).expect("cost");
    let ratio = r.tokens_per_s / best.tokens_per_s;
    outcome(
        default_halt && ratio >= C8_RATIO && r.tau >= best.tau,
        format!(
            "PACER {:.2} tok/s, tau {:.3}, mean gamma {:.2}; fixed optimum gamma={best_g} {:.2} tok/s, tau {:.3}; ratio {ratio:.4} (>= {C8_RATIO})",
            r.tokens_per_s, r.tau, r.mean_gamma, best.tokens_per_s, best.tau
        ),
    )
}

/// Mean criterion at a constant threshold, scored without a cache.
struct ConstThreshold<'p> {
    pv: &'p PreVerifier,
    block: usize,
    rounds: usize,
    t: f64,
}

impl DraftPolicy for ConstThreshold<'_> {
    fn begin_step(&mut self, _: &[TokenId], _: usize) -> pacer_core::Result<()> {
        Ok(())
    }

    fn next_block(&mut self, rounds: usize, _: usize) -> usize {
        if rounds < self.rounds {
            self.block
        } else {
            0
        }
    }

    fn after_block(&mut self, view: &StepView<'_>, start: usize) -> pacer_core::Result<bool> {
        let mut rows: Vec<PvInput<'_>> = view.context.iter().map(|h| PvInput { hidden: &h.0, position: None }).collect();
        rows.extend(view.drafts.iter().map(|d| PvInput { hidden: &d.hidden.0, position: Some(d.position) }));
        let logits = self.pv.logits_masked(&rows, &|q| (0..=q).collect())?;
        let s: Vec<f64> = logits[view.context.len() + start..].iter().map(|l| pacer_core::math::sigmoid(*l) as f64).collect();
        Ok(s.iter().sum::<f64>() / s.len() as f64 > self.t + MEAN_TIE_EPS)
    }
}

fn c9_halting_units() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let stop = |s: &[f64], t: f64, c: Criterion| halt_decision(s, t, c).expect("decision").stop;
    checks.push(("mean below", stop(&[0.5, 0.6], 0.7, Criterion::Mean)));
    checks.push(("mean above", !stop(&[0.9, 0.8], 0.7, Criterion::Mean)));
    checks.push(("mean equal stops", stop(&[0.9, 0.5], 0.7, Criterion::Mean)));
    checks.push(("mean exact equal stops", stop(&[0.75, 0.75], 0.75, Criterion::Mean)));
    checks.push(("any one low", stop(&[0.99, 0.99, 0.4], 0.7, Criterion::Any)));
    checks.push(("any all high", !stop(&[0.8, 0.75], 0.7, Criterion::Any)));
    checks.push(("last low", stop(&[0.99, 0.2], 0.7, Criterion::Last)));
    checks.push(("last high", !stop(&[0.1, 0.9], 0.7, Criterion::Last)));
    checks.push(("variants differ", !stop(&[0.95, 0.9, 0.6], 0.7, Criterion::Mean) && stop(&[0.95, 0.9, 0.6], 0.7, Criterion::Any)));

    // threshold sequence from a run that never stops
    let mut rng = stream(9, Stream::Data);
    let target = TabularModel::random(4, 1, 256, 1.5, 0.05, &mut rng);
    let draft = TabularModel::random(4, 1, 256, 1.5, 0.05, &mut rng);
    let mut sure = PreVerifier::new(4, 1, 256, 64, PositionEncoding::Learned, 3).expect("pv");
    sure.set_head_bias(12.0);
    let (t0, rho, k) = (0.7, 1.05, 8);
    let halt = HaltConfig { block: 2, threshold: t0, growth: rho, max_rounds: k, ..HaltConfig::default() };
    let mut policy = PacerPolicy::new(&sure, halt).expect("policy").recording();
    let dc = DecodeConfig { mode: DecodeMode::Stochastic, max_len: 40, seed: 5, ..DecodeConfig::default() };
    let prompt = [TokenId(1)];
    generate(&target, &draft, &prompt, &dc, &mut policy).expect("decode");
    let first: Vec<f64> = policy.decisions.iter().filter(|(s, _)| *s == 0).map(|(_, d)| d.threshold).collect();
    let mut rel = 0.0f64;
    for (i, t) in first.iter().enumerate() {
        rel = rel.max((t - t0 * rho.powi(i as i32)).abs() / (t0 * rho.powi(i as i32)));
    }
    checks.push(("K rounds recorded", first.len() == k));
    checks.push(("t_k = t0 rho^k", rel < C9_REL));
    let restarts = policy.decisions.windows(2).filter(|w| w[1].0 != w[0].0).all(|w| w[1].1.threshold == t0);
    checks.push(("threshold resets each step", restarts));
    checks.push(("grow_threshold", grow_threshold(0.7, 1.0) == 0.7 && grow_threshold(0.5, 1.04) == 0.5 * 1.04));

    // rho = 1 against a constant-threshold policy
    let pv = PreVerifier::new(4, 1, 256, 64, PositionEncoding::Learned, 11).expect("pv");
    let mut same = true;
    for seed in 0..20 {
        let dc = DecodeConfig { mode: DecodeMode::Stochastic, max_len: 40, seed, ..DecodeConfig::default() };
        let h1 = HaltConfig { block: 2, threshold: 0.5, growth: 1.0, max_rounds: 6, ..HaltConfig::default() };
        let a = pacer_generate(&target, &draft, &pv, &prompt, &h1, &dc).expect("decode");
        let b = generate(&target, &draft, &prompt, &dc, ConstThreshold { pv: &pv, block: 2, rounds: 6, t: 0.5 }).expect("decode");
        same &= a.tokens == b.tokens && a.records.iter().zip(&b.records).all(|(x, y)| x.gamma == y.gamma && x.accepted == y.accepted);
    }
    checks.push(("rho=1.00 equals no growth", same));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!("{} exact checks; max rel error of t_k {rel:.1e} (tol {C9_REL:.0e}); failed: {failed:?}", checks.len()),
    )
}

/// Spearman rank correlation with averaged ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn c10_position_ablation() -> Outcome {
    let f = fixture();
    let step = f.data.traces.iter().flat_map(|t| t.steps.iter().map(move |s| (t, s))).find(|(_, s)| s.drafts.len() >= 8).expect("long step");
    let (trace, s) = step;
    let m = trace.prompt.len() + s.prefix_len;
    let ctx = &trace.context_hidden[..m - 1];
    let block = &s.hidden[..4];
    let score = |pv: &PreVerifier, pos: &[usize]| {
        let mut c = pv.new_cache();
        pv.preverify_block(&mut c, ctx, block, pos, Scope::Full).expect("score")
    };
    let mut zeroed = f.pv.clone();
    zeroed.zero_positions();
    let invariant = [[5, 6, 7, 8], [9, 10, 11, 12], [21, 22, 23, 24]].iter().all(|p| score(&zeroed, p) == score(&zeroed, &[1, 2, 3, 4]));
    let sensitive = score(&f.pv, &[9, 10, 11, 12]) != score(&f.pv, &[1, 2, 3, 4]);

    let mut hits = vec![0usize; f.cfg.gamma_train];
    let mut totals = vec![0usize; f.cfg.gamma_train];
    for st in f.data.traces.iter().flat_map(|t| &t.steps) {
        for (j, l) in st.labels.iter().enumerate() {
            totals[j] += 1;
            hits[j] += *l as usize;
        }
    }
    let (pos, rate): (Vec<f64>, Vec<f64>) =
        (0..totals.len()).filter(|&j| totals[j] >= 20).map(|j| ((j + 1) as f64, hits[j] as f64 / totals[j] as f64)).unzip();
    let rho = spearman(&pos, &rate);
    let rises = rate.windows(2).filter(|w| w[1] > w[0]).count();
    outcome(
        invariant && rho <= 0.0,
        format!(
            "zeroed table position-invariant: {invariant}; trained table position-sensitive: {sensitive}; acceptance by position {:.3}..{:.3} over {} positions, Spearman {rho:.3} (<= 0), {rises} local rises",
            rate.first().copied().unwrap_or(f64::NAN),
            rate.last().copied().unwrap_or(f64::NAN),
            rate.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("losslessness, exact", c1_lossless_exact),
        ("greedy equivalence", c2_greedy_equivalence),
        ("packing fidelity", c3_packing_fidelity),
        ("cost-model reproduction", c4_cost_model),
        ("tau arithmetic", c5_tau),
        ("oracle dominance", c6_oracle_dominance),
        ("pre-verifier learnability", c7_learnability),
        ("end-to-end benefit", c8_end_to_end),
        ("halting-unit suite", c9_halting_units),
        ("position-embedding ablation", c10_position_ablation),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {n:>2} ({name}): {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    if let Some(f) = fixture::built() {
        println!("fixture build time: {:.1}s", f.build_s);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
