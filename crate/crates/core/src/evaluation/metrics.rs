use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranking and threshold metrics for one set of scored samples. AUC and
/// AUPRC are `None` when only one class is present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
}

pub const METRIC_NAMES: [&str; 6] = ["auc", "auprc", "accuracy", "f1", "recall", "precision"];

impl Metrics {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.auc, self.auprc, Some(self.accuracy), Some(self.f1), Some(self.recall), Some(self.precision)]
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Value(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::Value("no samples to score".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Value(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Value(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    // Walking from the lowest scores up, each positive beats every negative
    // already seen and ties with the negatives of its own group.
    let mut neg_below = 0usize;
    let mut twice_wins = 0u128;
    for g in tie_groups(scores).iter().rev() {
        let p = g.iter().filter(|&&i| labels[i] == 1).count();
        let n = g.len() - p;
        twice_wins += (2 * p * neg_below + p * n) as u128;
        neg_below += n;
    }
    Ok(Some(twice_wins as f64 / 2.0 / (pos as f64 * neg as f64)))
}

/// Area under the precision-recall step curve with one threshold per
/// distinct score.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Ok(None);
    }
    let pos = pos as f64;
    let (mut tp, mut seen, mut area, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    for g in tie_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i] == 1).count();
        seen += g.len();
        let recall = tp as f64 / pos;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(Some(area))
}

/// All six metrics. Scores at or above `threshold` predict player 1.
/// Precision and F1 are 0 when nothing is predicted positive; recall is 0
/// when no positives exist.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Metrics {
        auc: auc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        accuracy: ratio(tp + tn, labels.len()),
        f1,
        recall,
        precision,
    })
}
