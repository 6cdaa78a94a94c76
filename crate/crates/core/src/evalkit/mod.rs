//! Evaluation metrics on the synthetic world: identity preservation, edit
//! consistency, difference-vector statistics, path deviation and leakage.

mod metrics;
mod report;

pub use metrics::{
    diffvec_stats, edit_consistency, identity_accuracy, identity_scores, identity_threshold, leakage, path_deviation,
    DiffVecStats, EditSequence,
};
pub use report::{MetricReport, ABSENT_METRICS, REPORT_SCHEMA_VERSION};
