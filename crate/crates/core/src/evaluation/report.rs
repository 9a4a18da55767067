use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, DatasetSplit, MatchSequence, Modality};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{compute_metrics, Metrics, METRIC_NAMES};
use crate::evaluation::stats::{fisher_combined, mean_std, welch_p_value, FisherResult};
use crate::multigran::{assemble_granularity_targets, train, Granularity, HydraNetModel, LossLog, TrainConfig};

/// Scores and labels of every sample of one granularity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scored {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Momentum scores of every sample in `matches`, pooled per granularity.
/// Matches are scored in parallel and pooled in input order.
pub fn score_matches(model: &HydraNetModel, matches: &[MatchSequence]) -> Result<[Scored; 4]> {
    let per_match: Vec<Result<Vec<(Granularity, f64, u8)>>> = matches
        .par_iter()
        .map(|m| {
            let ms = model.predict(m)?;
            Ok(assemble_granularity_targets(m).into_iter().map(|s| (s.granularity, ms[s.t], s.label)).collect())
        })
        .collect();
    let mut out: [Scored; 4] = Default::default();
    for r in per_match {
        for (g, score, label) in r? {
            out[g.index()].scores.push(score);
            out[g.index()].labels.push(label);
        }
    }
    Ok(out)
}

/// Metrics per granularity; `None` where a granularity has no samples.
pub fn evaluate_model(model: &HydraNetModel, matches: &[MatchSequence]) -> Result<[Option<Metrics>; 4]> {
    let scored = score_matches(model, matches)?;
    let mut out = [None; 4];
    for (k, s) in scored.iter().enumerate() {
        if !s.scores.is_empty() {
            out[k] = Some(compute_metrics(&s.scores, &s.labels, 0.5)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation over folds, keyed by granularity and
/// then metric. Metrics undefined in every fold are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport(pub BTreeMap<String, BTreeMap<String, MeanStd>>);

impl MetricReport {
    pub fn from_folds(folds: &[[Option<Metrics>; 4]]) -> Self {
        let mut out = BTreeMap::new();
        for g in Granularity::ALL {
            let mut per_metric = BTreeMap::new();
            for (j, name) in METRIC_NAMES.iter().enumerate() {
                let values = fold_values(folds, g, j);
                if let Some((mean, std)) = mean_std(&values) {
                    per_metric.insert(name.to_string(), MeanStd { mean, std });
                }
            }
            if !per_metric.is_empty() {
                out.insert(g.name().to_string(), per_metric);
            }
        }
        MetricReport(out)
    }

    pub fn get(&self, g: Granularity, metric: &str) -> Option<MeanStd> {
        self.0.get(g.name()).and_then(|m| m.get(metric)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Defined values of metric `j` for granularity `g`, in fold order.
fn fold_values(folds: &[[Option<Metrics>; 4]], g: Granularity, j: usize) -> Vec<f64> {
    folds.iter().filter_map(|f| f[g.index()].and_then(|m| m.values()[j])).collect()
}

fn select<'a>(matches: &'a [MatchSequence], ids: &[String]) -> Result<Vec<MatchSequence>> {
    let by_id: BTreeMap<&str, &'a MatchSequence> = matches.iter().map(|m| (m.match_id.as_str(), m)).collect();
    ids.iter()
        .map(|id| by_id.get(id.as_str()).map(|m| (*m).clone()).ok_or_else(|| Error::Data(format!("unknown match {id}"))))
        .collect()
}

/// Seeded split of `matches` per the configuration.
pub fn split_matches(matches: &[MatchSequence], config: &TrainConfig) -> Result<DatasetSplit> {
    let ids: Vec<String> = matches.iter().map(|m| m.match_id.clone()).collect();
    split_dataset(&ids, config.test_fraction, config.folds, config.seed)
}

/// Trains on the split's training matches and scores the held-out test set.
pub fn train_and_test(
    matches: &[MatchSequence],
    split: &DatasetSplit,
    config: &TrainConfig,
    ablation: Option<Modality>,
) -> Result<(HydraNetModel, LossLog, [Option<Metrics>; 4])> {
    let train_set = select(matches, &split.train)?;
    let test_set = select(matches, &split.test)?;
    if test_set.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let mut model = HydraNetModel::new(config.clone(), ablation)?;
    let log = train(&mut model, &train_set)?;
    let metrics = evaluate_model(&model, &test_set)?;
    Ok((model, log, metrics))
}

/// One model per fold, trained on the other folds and scored on the held
/// out fold. Folds run in parallel; results are in fold order.
pub fn cross_validate(
    matches: &[MatchSequence],
    split: &DatasetSplit,
    config: &TrainConfig,
    ablation: Option<Modality>,
) -> Result<Vec<[Option<Metrics>; 4]>> {
    if split.folds.len() < 2 {
        return Err(Error::Config("cross-validation needs at least two folds".into()));
    }
    (0..split.folds.len())
        .into_par_iter()
        .map(|k| {
            let train_set = select(matches, &split.fold_train(k))?;
            let held_out = select(matches, &split.folds[k])?;
            let mut model = HydraNetModel::new(config.clone(), ablation)?;
            train(&mut model, &train_set)?;
            evaluate_model(&model, &held_out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityComparison {
    /// Ablated mean minus baseline mean per metric.
    pub deltas: BTreeMap<String, f64>,
    /// Welch p-value per metric over the fold values.
    pub p_values: BTreeMap<String, f64>,
    pub combined: Option<FisherResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub modality: String,
    /// Name of the per-metric two-sample test.
    pub test: String,
    pub baseline: MetricReport,
    pub ablated: MetricReport,
    pub comparison: BTreeMap<String, GranularityComparison>,
}

impl AblationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares fold metrics of a baseline and an ablated run.
pub fn compare_folds(
    modality: Modality,
    baseline: &[[Option<Metrics>; 4]],
    ablated: &[[Option<Metrics>; 4]],
) -> Result<AblationReport> {
    let mut comparison = BTreeMap::new();
    for g in Granularity::ALL {
        let mut deltas = BTreeMap::new();
        let mut p_values = BTreeMap::new();
        for (j, name) in METRIC_NAMES.iter().enumerate() {
            let (a, b) = (fold_values(baseline, g, j), fold_values(ablated, g, j));
            if let (Some((ma, _)), Some((mb, _))) = (mean_std(&a), mean_std(&b)) {
                deltas.insert(name.to_string(), mb - ma);
            }
            if a.len() >= 2 && b.len() >= 2 {
                p_values.insert(name.to_string(), welch_p_value(&a, &b)?);
            }
        }
        if deltas.is_empty() {
            continue;
        }
        let ps: Vec<f64> = p_values.values().copied().collect();
        let combined = if ps.is_empty() { None } else { Some(fisher_combined(&ps)?) };
        comparison.insert(g.name().to_string(), GranularityComparison { deltas, p_values, combined });
    }
    Ok(AblationReport {
        modality: modality.name().to_string(),
        test: "welch".into(),
        baseline: MetricReport::from_folds(baseline),
        ablated: MetricReport::from_folds(ablated),
        comparison,
    })
}

/// Cross-validates the baseline and the model with `modality` zeroed, then
/// compares them metric by metric.
pub fn run_mlmm_ablation(
    matches: &[MatchSequence],
    split: &DatasetSplit,
    config: &TrainConfig,
    modality: &str,
) -> Result<AblationReport> {
    let modality = Modality::parse(modality).ok_or_else(|| Error::Value(format!("unknown modality {modality:?}")))?;
    let baseline = cross_validate(matches, split, config, None)?;
    let ablated = cross_validate(matches, split, config, Some(modality))?;
    compare_folds(modality, &baseline, &ablated)
}

pub fn write_json(path: &Path, json: &str) -> Result<()> {
    std::fs::write(path, format!("{json}\n")).map_err(|e| Error::io(path, e))
}
