//! Exact output distributions of speculative decoding on tabular models.
//!
//! The oracle enumerates every draft sequence the policy can produce and
//! applies the rejection rule analytically, so the joint law of the output
//! is known exactly and can be compared with the target's own
//! autoregressive law.

use std::collections::BTreeMap;

use pacer_core::math::sigmoid;
use pacer_core::pacer::{PreVerifier, PvInput};
use pacer_core::{HiddenVec, KvCache, LanguageModel, TabularModel, TokenId};

/// Draft-length rule replayed by the oracle.
pub enum Rule<'a> {
    Fixed(usize),
    /// Mean criterion with full attention, scored without cache.
    Pacer { pv: &'a PreVerifier, block: usize, max_rounds: usize, t0: f64, rho: f64 },
}

pub type Law = BTreeMap<Vec<u32>, f64>;

fn dist(m: &TabularModel, seq: &[TokenId]) -> Vec<f64> {
    m.dist_after(seq).as_slice().to_vec()
}

fn hidden_states(m: &TabularModel, seq: &[TokenId]) -> Vec<HiddenVec> {
    let mut c: KvCache = m.new_cache();
    m.forward(seq, &mut c).expect("forward").hidden
}

impl Rule<'_> {
    /// Size of the next block after `rounds` blocks; 0 ends drafting.
    fn next_block(&self, rounds: usize) -> usize {
        match self {
            Rule::Fixed(g) => if rounds == 0 { *g } else { 0 },
            Rule::Pacer { block, max_rounds, .. } => if rounds < *max_rounds { *block } else { 0 },
        }
    }

    /// Whether drafting continues after round `round` (1-based), whose
    /// block is `drafts[start..]`.
    fn keep_going(&self, draft: &TabularModel, committed: &[TokenId], drafts: &[TokenId], round: usize, start: usize) -> bool {
        match self {
            Rule::Fixed(_) => false,
            Rule::Pacer { pv, t0, rho, .. } => {
                let mut seq = committed.to_vec();
                seq.extend_from_slice(drafts);
                let h = hidden_states(draft, &seq[..seq.len() - 1]);
                let m = committed.len();
                let rows: Vec<PvInput<'_>> = (0..m - 1 + drafts.len())
                    .map(|r| PvInput { hidden: &h[r].0, position: (r >= m - 1).then(|| r - (m - 1) + 1) })
                    .collect();
                let logits = pv.logits_masked(&rows, &|q| (0..=q).collect()).expect("pv forward");
                let scores: Vec<f64> = logits[m - 1 + start..].iter().map(|l| sigmoid(*l) as f64).collect();
                let mut t = *t0;
                for _ in 1..round {
                    t *= rho;
                }
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                mean > t + pacer_core::pacer::MEAN_TIE_EPS
            }
        }
    }
}

struct Ctx<'a> {
    target: &'a TabularModel,
    draft: &'a TabularModel,
    rule: &'a Rule<'a>,
    max_len: usize,
    prompt_len: usize,
    law: Law,
}

impl Ctx<'_> {
    fn step(&mut self, committed: &[TokenId], prob: f64) {
        let out = committed.len() - self.prompt_len;
        if out == self.max_len {
            let key = committed[self.prompt_len..].iter().map(|t| t.0).collect();
            *self.law.entry(key).or_insert(0.0) += prob;
            return;
        }
        let cap = self.max_len - out - 1;
        self.draft_rounds(committed, &mut Vec::new(), prob, 0, cap);
    }

    fn draft_rounds(&mut self, committed: &[TokenId], drafts: &mut Vec<TokenId>, prob: f64, rounds: usize, cap: usize) {
        let want = self.rule.next_block(rounds).min(cap - drafts.len());
        if want == 0 {
            self.verify(committed, drafts, prob);
            return;
        }
        self.draft_block(committed, drafts, prob, rounds, cap, want, drafts.len());
    }

    #[allow(clippy::too_many_arguments)]
    fn draft_block(&mut self, committed: &[TokenId], drafts: &mut Vec<TokenId>, prob: f64, rounds: usize, cap: usize, left: usize, start: usize) {
        if left == 0 {
            let round = rounds + 1;
            if self.rule.keep_going(self.draft, committed, drafts, round, start) && drafts.len() < cap {
                self.draft_rounds(committed, drafts, prob, round, cap);
            } else {
                self.verify(committed, drafts, prob);
            }
            return;
        }
        let mut seq = committed.to_vec();
        seq.extend_from_slice(drafts);
        let q = dist(self.draft, &seq);
        for (y, &qy) in q.iter().enumerate() {
            if qy == 0.0 {
                continue;
            }
            drafts.push(TokenId(y as u32));
            self.draft_block(committed, drafts, prob * qy, rounds, cap, left - 1, start);
            drafts.pop();
        }
    }

    fn verify(&mut self, committed: &[TokenId], drafts: &[TokenId], prob: f64) {
        let mut seq = committed.to_vec();
        let mut alive = prob;
        for &y in drafts {
            let p = dist(self.target, &seq);
            let q = dist(self.draft, &seq);
            let a = (p[y.index()] / q[y.index()]).min(1.0);
            let reject = alive * (1.0 - a);
            if reject > 0.0 {
                let resid: Vec<f64> = p.iter().zip(&q).map(|(p, q)| (p - q).max(0.0)).collect();
                let z: f64 = resid.iter().sum();
                for (v, r) in resid.iter().enumerate() {
                    if *r > 0.0 {
                        let mut next = seq.clone();
                        next.push(TokenId(v as u32));
                        self.step(&next, reject * r / z);
                    }
                }
            }
            alive *= a;
            if alive == 0.0 {
                return;
            }
            seq.push(y);
        }
        let p = dist(self.target, &seq);
        for (v, pv) in p.iter().enumerate() {
            if *pv > 0.0 {
                let mut next = seq.clone();
                next.push(TokenId(v as u32));
                self.step(&next, alive * pv);
            }
        }
    }
}

/// Joint law of the first `max_len` output tokens under speculative decoding.
pub fn sd_law(target: &TabularModel, draft: &TabularModel, prompt: &[TokenId], max_len: usize, rule: &Rule<'_>) -> Law {
    let mut ctx = Ctx { target, draft, rule, max_len, prompt_len: prompt.len(), law: Law::new() };
    ctx.step(prompt, 1.0);
    ctx.law
}

/// Joint law of the target's own sampling.
pub fn target_law(target: &TabularModel, prompt: &[TokenId], max_len: usize) -> Law {
    let mut law = Law::new();
    let mut stack = vec![(prompt.to_vec(), 1.0f64)];
    while let Some((seq, p)) = stack.pop() {
        if seq.len() - prompt.len() == max_len {
            law.insert(seq[prompt.len()..].iter().map(|t| t.0).collect(), p);
            continue;
        }
        for (v, pv) in dist(target, &seq).iter().enumerate() {
            if *pv > 0.0 {
                let mut next = seq.clone();
                next.push(TokenId(v as u32));
                stack.push((next, p * pv));
            }
        }
    }
    law
}

/// `marginals[i][v]` = P(output token `i` is `v`).
pub fn marginals(law: &Law, vocab: usize, len: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; vocab]; len];
    for (seq, p) in law {
        for (i, t) in seq.iter().enumerate() {
            m[i][*t as usize] += p;
        }
    }
    m
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn law_diff(a: &Law, b: &Law) -> f64 {
    let keys: std::collections::BTreeSet<&Vec<u32>> = a.keys().chain(b.keys()).collect();
    keys.into_iter().map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs()).fold(0.0, f64::max)
}
