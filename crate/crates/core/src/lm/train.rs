//! Next-token training for the toy draft and target transformers.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{stream, Stream};

use super::{ModelSpec, TokenId, Transformer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmTrainConfig {
    pub steps: usize,
    /// Windows per optimizer step.
    pub batch: usize,
    /// Tokens per window, including the final target.
    pub window: usize,
    pub lr: f32,
    /// Linear warm-up steps, followed by cosine decay to `lr / 10`.
    pub warmup: usize,
    /// Fraction of the token stream reserved for held-out evaluation.
    pub heldout_frac: f64,
    /// Windows used for each loss evaluation.
    pub eval_windows: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 8,
            window: 64,
            lr: 3e-3,
            warmup: 30,
            heldout_frac: 0.1,
            eval_windows: 24,
            seed: 0,
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.window < 2 || !(self.lr > 0.0) {
            return Err(Error::config("steps, batch >= 1, window >= 2 and lr > 0 are required"));
        }
        if !(0.0..1.0).contains(&self.heldout_frac) || self.eval_windows == 0 {
            return Err(Error::config("held-out fraction must lie in [0, 1) and eval_windows >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmTrainReport {
    /// Mean training loss on the evaluation windows before the first update.
    pub initial_loss: f32,
    /// Same windows after the last update.
    pub final_loss: f32,
    pub initial_heldout_loss: f32,
    pub heldout_loss: f32,
    /// Minibatch loss of every optimizer step.
    pub step_losses: Vec<f32>,
}

impl LmTrainReport {
    pub fn heldout_perplexity(&self) -> f64 {
        libm::exp(self.heldout_loss as f64)
    }
}

/// Mean next-token loss of `model` over the given windows.
pub fn mean_loss(model: &Transformer, windows: &[&[TokenId]]) -> f32 {
    let mut tape = Tape::new();
    let vars = tape.bind(model.params());
    let loss = model.loss_on_tape(&mut tape, &vars, windows);
    tape.value(loss)[0]
}

fn fixed_windows(tokens: &[TokenId], len: usize, count: usize) -> Vec<&[TokenId]> {
    if tokens.len() < len {
        return if tokens.len() >= 2 { alloc::vec![tokens] } else { Vec::new() };
    }
    let span = tokens.len() - len;
    (0..count).map(|i| {
        let start = if count > 1 { span * i / (count - 1) } else { 0 };
        &tokens[start..start + len]
    }).collect()
}

/// Trains a transformer with spec `spec` on a token stream.
///
/// The tail `heldout_frac` of the stream is never trained on. Minibatches
/// are random windows drawn from the training part with the `Shuffle`
/// sub-stream of `config.seed`, so equal inputs give bit-identical weights.
pub fn train_toy_lm(
    corpus: &[TokenId],
    spec: ModelSpec,
    config: &LmTrainConfig,
) -> Result<(Transformer, LmTrainReport)> {
    config.validate()?;
    let window = config.window.min(spec.context_len + 1);
    let split = corpus.len() - (corpus.len() as f64 * config.heldout_frac) as usize;
    let (train, heldout) = corpus.split_at(split);
    if train.len() < window {
        return Err(Error::arg("corpus is shorter than one training window"));
    }
    let mut model = Transformer::new(spec)?;
    let eval_train = fixed_windows(train, window, config.eval_windows);
    let eval_held = fixed_windows(if heldout.len() >= 2 { heldout } else { train }, window, config.eval_windows);
    let initial_loss = mean_loss(&model, &eval_train);
    let initial_heldout_loss = mean_loss(&model, &eval_held);

    let mut opt = AdamW::new(AdamWConfig { lr: config.lr, ..AdamWConfig::default() }, model.params());
    let mut rng = stream(config.seed, Stream::Shuffle);
    let mut step_losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&[TokenId]> = (0..config.batch)
            .map(|_| {
                let s = rng.gen_range(0..=train.len() - window);
                &train[s..s + window]
            })
            .collect();
        let mut tape = Tape::new();
        let vars = tape.bind(model.params());
        let loss = model.loss_on_tape(&mut tape, &vars, &batch);
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::Training { step });
        }
        step_losses.push(value);
        let grads = tape.backward(loss, model.params());
        opt.config.lr = schedule(config, step);
        opt.step(model.params_mut(), &grads);
    }

    let final_loss = mean_loss(&model, &eval_train);
    let heldout_loss = mean_loss(&model, &eval_held);
    if !final_loss.is_finite() || !heldout_loss.is_finite() {
        return Err(Error::Training { step: config.steps });
    }
    Ok((model, LmTrainReport { initial_loss, final_loss, initial_heldout_loss, heldout_loss, step_losses }))
}

fn schedule(c: &LmTrainConfig, step: usize) -> f32 {
    if step < c.warmup {
        return c.lr * (step + 1) as f32 / c.warmup as f32;
    }
    let span = (c.steps - c.warmup).max(1) as f32;
    let progress = (step - c.warmup) as f32 / span;
    let floor = c.lr * 0.1;
    floor + (c.lr - floor) * 0.5 * (1.0 + libm::cosf(core::f32::consts::PI * progress))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<TokenId> {
        // a short periodic stream is enough to see learning
        (0..600u32).map(|i| TokenId([0, 1, 2, 3, 2, 1][(i % 6) as usize])).collect()
    }

    fn quick() -> LmTrainConfig {
        LmTrainConfig { steps: 40, batch: 2, window: 16, lr: 1e-2, warmup: 4, eval_windows: 4, ..Default::default() }
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let spec = ModelSpec::transformer(4, 1, 16, 2, 32, 3);
        let (m1, r1) = train_toy_lm(&corpus(), spec, &quick()).unwrap();
        assert!(r1.final_loss < r1.initial_loss);
        assert!(r1.heldout_perplexity() < 4.0);
        let (m2, r2) = train_toy_lm(&corpus(), spec, &quick()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = ModelSpec::transformer(4, 1, 16, 2, 32, 3);
        let cfg = LmTrainConfig { lr: f32::INFINITY, ..quick() };
        let r = train_toy_lm(&corpus(), spec, &cfg).map(|(_, rep)| rep.step_losses);
        assert!(matches!(r, Err(Error::Training { step: 1 })), "{r:?}");
    }
}
