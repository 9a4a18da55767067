//! Metrics, Fisher combination of p-values, cross-validation and modality
//! ablation harnesses, and momentum-trace export.

mod metrics;
mod report;
mod stats;
mod trace;

pub use metrics::{auc, auprc, compute_metrics, Metrics, METRIC_NAMES};
pub use report::{
    compare_folds, cross_validate, evaluate_model, run_mlmm_ablation, score_matches, split_matches, train_and_test,
    write_json, AblationReport, GranularityComparison, MeanStd, MetricReport, Scored,
};
pub use stats::{chi2_even_survival, fisher_combined, mean_std, welch_p_value, FisherResult, P_FLOOR};
pub use trace::{build_trace, export_ms_trace, streaks, MomentumTrace, Streak, TracePoint};
