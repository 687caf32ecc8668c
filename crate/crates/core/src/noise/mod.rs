//! Instance-dependent label-noise transition matrices: representation,
//! estimation from labeled data, forward loss correction and
//! identifiability diagnostics.

mod correction;
mod estimator;
mod identifiability;
mod transition;

pub use correction::forward_corrected_loss;
pub use estimator::{
    estimator_loss, train_estimator, EstimatorBatchRecord, EstimatorConfig, EstimatorTarget,
    TransitionEstimator,
};
pub use identifiability::{
    pairwise_observables, class_dependent_reduce, informative_check, InformativeReport,
    PairObservables, RANK_TOLERANCE,
};
pub use transition::{mean_row_l1, TransitionMatrix};
