use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autograd::{Gradients, KeyLists, Tape};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::pacer::PreVerifier;
use crate::rng::{stream, Stream};

use super::{evaluate_classifier, predict, ClassifierReport, HiddenSource, PackedExample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvTrainConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    /// Packed examples per optimizer step.
    pub batch: usize,
    pub seed: u64,
    /// Caps each step's rejected-label weight at twice its accepted mass.
    pub balance: bool,
}

impl Default for PvTrainConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, weight_decay: 0.01, epochs: 5, batch: 1, seed: 0, balance: false }
    }
}

impl PvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("lr > 0, epochs >= 1 and batch >= 1 are required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvTrainReport {
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f32>,
    pub final_loss: f32,
    pub heldout: Option<ClassifierReport>,
}

struct Prepared {
    hidden: Vec<f32>,
    rows: usize,
    positions: Vec<Option<u32>>,
    keys: KeyLists,
    /// `(row, label, weight)` for every draft row.
    items: Vec<(usize, f32, f32)>,
}

fn prepare(ex: &PackedExample, source: HiddenSource<'_>, balance: bool) -> Result<Prepared> {
    let hidden = ex.pv_hidden(source)?;
    let p = ex.context_rows();
    let rows = ex.num_rows();
    let mut positions: Vec<Option<u32>> = alloc::vec![None; p];
    positions.extend(ex.positions.iter().map(|&j| Some(j as u32 - 1)));
    let mut items = Vec::with_capacity(ex.num_drafts());
    let mut row = p;
    for d in &ex.drafts {
        let labels = &ex.labels[row - p..row - p + d.len()];
        let ones = labels.iter().filter(|l| **l == 1).count();
        let zeros = labels.len() - ones;
        let cap = 2.0 * ones.max(1) as f32;
        let w0 = if balance && zeros as f32 > cap { cap / zeros as f32 } else { 1.0 };
        for &l in labels {
            items.push((row, l as f32, if l == 1 { 1.0 } else { w0 }));
            row += 1;
        }
    }
    Ok(Prepared { hidden, rows, positions, keys: Rc::new(ex.mask.clone().into_keys()), items })
}

/// Binary cross-entropy training over draft rows of packed examples.
///
/// Context rows carry no loss. Examples are visited in a fresh shuffled
/// order each epoch, drawn from the `Shuffle` sub-stream of `config.seed`.
pub fn train_preverifier(
    mut pv: PreVerifier,
    train: &[PackedExample],
    heldout: &[PackedExample],
    source: HiddenSource<'_>,
    config: &PvTrainConfig,
) -> Result<(PreVerifier, PvTrainReport)> {
    config.validate()?;
    if train.is_empty() || train.iter().all(|e| e.num_drafts() == 0) {
        return Err(Error::arg("empty training set"));
    }
    let data: Vec<Prepared> = train.iter().map(|e| prepare(e, source, config.balance)).collect::<Result<_>>()?;
    let d = pv.hidden_size();
    let frozen = pv.frozen();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        pv.params(),
    );
    let mut rng = stream(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f32;
        let mut batches = 0;
        for chunk in order.chunks(config.batch) {
            let mut grads = Gradients::zeros_like(pv.params());
            let mut loss_sum = 0.0f32;
            for &i in chunk {
                let ex = &data[i];
                let mut tape = Tape::new();
                let vars = tape.bind(pv.params());
                let h = tape.constant(ex.rows, d, ex.hidden.clone());
                let logits = pv.logits_on_tape(&mut tape, &vars, h, ex.positions.clone(), ex.keys.clone());
                let loss = tape.bce_with_logits(logits, ex.items.clone());
                let value = tape.value(loss)[0];
                if !value.is_finite() {
                    return Err(Error::Training { step });
                }
                loss_sum += value;
                grads.accumulate(&tape.backward(loss, pv.params()));
            }
            grads.scale(1.0 / chunk.len() as f32);
            for &id in &frozen {
                grads.grads[id].iter_mut().for_each(|g| *g = 0.0);
            }
            opt.step(pv.params_mut(), &grads);
            total += loss_sum / chunk.len() as f32;
            batches += 1;
            step += 1;
        }
        epoch_losses.push(total / batches as f32);
    }
    let heldout = if heldout.is_empty() {
        None
    } else {
        let (s, l, _) = predict(&pv, heldout, source)?;
        Some(evaluate_classifier(&s, &l)?)
    };
    let final_loss = *epoch_losses.last().expect("at least one epoch");
    Ok((pv, PvTrainReport { epoch_losses, final_loss, heldout }))
}
