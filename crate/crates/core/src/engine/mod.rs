//! The semi-supervised training loop: feature-space perturbations,
//! distribution alignment, pseudo-label masking, the supervised and
//! unsupervised losses, and per-run metrics.

mod align;
mod augment;
mod config;
mod losses;
mod metrics;
mod oracle;
mod train;

pub use align::{distribution_alignment, DaState, DA_FLOOR};
pub use augment::{strong_augment, weak_augment};
pub use config::TrainConfig;
pub use losses::{
    pseudo_label_batch, supervised_loss, unsupervised_loss, PseudoLabel, TransitionSource,
    UnsupervisedOutput,
};
pub use metrics::{MetricsRow, RunMetrics, RunSummary, METRICS_HEADER};
pub use oracle::GroundTruth;
pub use train::{evaluate, train, train_supervised, TrainOutcome};
