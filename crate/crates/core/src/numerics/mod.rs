//! Dense numerics shared by every other module: a row-major [`Matrix`],
//! [`ProbVector`] with temperature-scaled [`softmax`] and [`cross_entropy`],
//! the [`MlpModel`] with analytic gradients and the momentum [`SgdState`].

mod matrix;
mod mlp;
mod optim;
mod prob;

pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, Layer, MlpGradient, MlpModel};
pub use optim::{LrSchedule, SgdConfig, SgdState};
pub use prob::{cross_entropy, softmax, ProbVector, PROB_FLOOR};

pub(crate) use prob::{argmax, softmax_slice};
