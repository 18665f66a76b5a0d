use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::pacer::{PreVerifier, PvInput};

use super::{HiddenSource, PackedExample};

/// One equal-width bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_score: f64,
    pub positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub count: usize,
    /// Accuracy at the 0.5 cut.
    pub accuracy: f64,
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub bins: Vec<CalibrationBin>,
}

/// Area under the ROC curve by the rank statistic, ties averaged.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::arg("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * mean_rank;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy, AUC and ten calibration bins.
pub fn evaluate_classifier(scores: &[f64], labels: &[u8]) -> Result<ClassifierReport> {
    if scores.is_empty() {
        return Err(Error::Metric("empty evaluation set".into()));
    }
    let auc = match auc(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::Metric(_)) => None,
        Err(e) => return Err(e),
    };
    let correct = scores.iter().zip(labels).filter(|(s, l)| (**s >= 0.5) == (**l == 1)).count();
    let nb = 10;
    let mut bins: Vec<CalibrationBin> = (0..nb)
        .map(|b| CalibrationBin {
            lo: b as f64 / nb as f64,
            hi: (b + 1) as f64 / nb as f64,
            count: 0,
            mean_score: 0.0,
            positive_rate: 0.0,
        })
        .collect();
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * nb as f64) as usize).min(nb - 1);
        bins[b].count += 1;
        bins[b].mean_score += s;
        bins[b].positive_rate += l as f64;
    }
    for b in &mut bins {
        if b.count > 0 {
            b.mean_score /= b.count as f64;
            b.positive_rate /= b.count as f64;
        }
    }
    Ok(ClassifierReport { count: scores.len(), accuracy: correct as f64 / scores.len() as f64, auc, bins })
}

/// Acceptance probabilities, labels and draft positions of every draft row.
pub fn predict(
    pv: &PreVerifier,
    examples: &[PackedExample],
    source: HiddenSource<'_>,
) -> Result<(Vec<f64>, Vec<u8>, Vec<usize>)> {
    let d = pv.hidden_size();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut positions = Vec::new();
    for ex in examples {
        let h = ex.pv_hidden(source)?;
        let logits = packed_logits(pv, ex, &h, d)?;
        scores.extend(logits[ex.context_rows()..].iter().map(|&l| sigmoid(l) as f64));
        labels.extend_from_slice(&ex.labels);
        positions.extend_from_slice(&ex.positions);
    }
    Ok((scores, labels, positions))
}

/// Logits of every row of a packed example via the inference kernels.
pub fn packed_logits(pv: &PreVerifier, ex: &PackedExample, hidden: &[f32], d: usize) -> Result<Vec<f32>> {
    let p = ex.context_rows();
    let rows: Vec<PvInput<'_>> = hidden
        .chunks(d)
        .enumerate()
        .map(|(r, h)| PvInput { hidden: h, position: if r < p { None } else { Some(ex.positions[r - p]) } })
        .collect();
    let keys = Rc::new(ex.mask.clone().into_keys());
    pv.logits_masked(&rows, &|q| keys[q].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    #[test]
    fn auc_cases() {
        let labels = [0u8, 0, 1, 1, 0, 1];
        let perfect = [0.1, 0.2, 0.8, 0.9, 0.3, 0.7];
        assert_eq!(auc(&perfect, &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &labels).unwrap(), 0.5);
        let s = [0.3, 0.6, 0.5, 0.9, 0.2, 0.4];
        let a = auc(&s, &labels).unwrap();
        let anti: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        assert!((auc(&anti, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
    }

    #[test]
    fn report_bins() {
        let r = evaluate_classifier(&[0.05, 0.95, 0.55, 0.45], &[0, 1, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(r.bins[9].positive_rate, 1.0);
    }
}
