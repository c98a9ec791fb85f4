//! Ranking and classification metrics, trial aggregation, gating-weight
//! tables and report files.

mod gating;
mod metrics;
mod predict;
mod report;

pub use gating::{gate_samples, gating_report, gating_table, GateSample, GatingCell, GatingReport};
pub use metrics::{
    aggregate, aggregate_trials, auc_macro, auc_per_class, evaluate_probabilities, precision_recall, ClassMetrics,
    MeanSe, PrecisionRecall, TrialMetrics,
};
pub use predict::{predict, Predictions};
pub use report::{emit_report, MetricRecord, ReportFiles, AUC_DEFINITION, PLOT_FILES};
