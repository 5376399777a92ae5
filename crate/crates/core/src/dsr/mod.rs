//! Dual-stream reconciliation: composition/projection heads, the gated
//! alignment and reconciliation losses, the InfoNCE baseline, and the
//! second-stage trainer.

pub mod heads;
pub mod loss;
pub mod train;

pub use heads::{compose_query, HeadForward, HeadGrads, HeadInit, HeadInitKind, HeadParams};
pub use loss::{
    align_loss, infonce_loss, recon_loss, similarity, total_objective, LossMode, ObjectiveParts,
    ObjectiveSpec, PairGrads, SoloRouting, LOG_CLAMP,
};
pub use train::{
    batch_confidence, train_stage2, ConfidenceSchedule, DsrHyper, EpochStats, TrainReport,
    HISTOGRAM_BINS,
};
