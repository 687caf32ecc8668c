//! Semi-supervised learning with instance-dependent pseudo-label thresholds.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, probability vectors, a small MLP with
//!   hand-derived gradients, SGD with momentum and temperature-scaled softmax.
//! - [`synthdata`]: Gaussian-mixture datasets with closed-form Bayes posteriors,
//!   instance-dependent noise fields, CSV and IDX loaders.
//! - [`noise`]: transition matrices, the transition estimator network,
//!   forward loss correction and identifiability diagnostics.
//! - [`thresholds`]: fixed, relative and instance-dependent acceptance
//!   policies, the correctness lower bound and margin-condition fitting.
//! - [`engine`]: the weak/strong consistency training loop and run metrics.
//!
//! Everything is `f64` and deterministic given a seed.

pub mod engine;
pub mod error;
pub mod noise;
pub mod numerics;
pub mod synthdata;
pub mod thresholds;

pub use error::{Error, Result};

/// Library version recorded in run artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
