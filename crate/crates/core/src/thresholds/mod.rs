//! Pseudo-label acceptance policies and the correctness guarantee attached
//! to the instance-dependent threshold.

mod bound;
mod policy;
mod tsybakov;

pub use bound::{measure_epsilon, correctness_bound, BoundReport, InstanceBound};
pub use policy::{
    accept, instant_threshold, relative_threshold, AcceptContext, Acceptance, InstanceContext,
    MatrixSource, ThresholdPolicy,
};
pub use tsybakov::{fit_tsybakov, linear_grid, TsybakovFit};
