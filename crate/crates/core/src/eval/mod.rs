//! Retrieval and detection metrics and the experiment harness.

pub mod experiment;
pub mod metrics;

pub use experiment::{run_experiment, run_sweep, Outcome, SweepParam, SweepPoint, Variant};
pub use metrics::{
    auc, detection_metrics, recall_at_k, subset_recall, DetectionMetrics, DetectionResult,
};
