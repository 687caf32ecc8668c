use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::noise::TransitionMatrix;
use crate::numerics::ProbVector;

/// Which transition matrix feeds the instance-dependent threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    /// `T̂(x)` evaluated at each instance.
    #[default]
    Instance,
    /// The mean of `T̂` over the labeled set, shared by every instance.
    ClassReduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Accept when confidence exceeds a constant `tau`.
    Fixed { tau: f64 },
    /// Accept when confidence exceeds `κ_t`, `beta` times the mean labeled top-1 confidence.
    Relative { beta: f64 },
    /// Accept when confidence exceeds the instance-dependent threshold built on `κ_t`.
    Instant {
        beta: f64,
        #[serde(default)]
        source: MatrixSource,
    },
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            ThresholdPolicy::Fixed { tau } => ("tau", tau),
            ThresholdPolicy::Relative { beta } | ThresholdPolicy::Instant { beta, .. } => ("beta", beta),
        };
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")));
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ThresholdPolicy::Fixed { .. } => "fixed",
            ThresholdPolicy::Relative { .. } => "relative",
            ThresholdPolicy::Instant { .. } => "instant",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            ThresholdPolicy::Fixed { .. } => None,
            ThresholdPolicy::Relative { beta } | ThresholdPolicy::Instant { beta, .. } => Some(beta),
        }
    }

    pub fn needs_estimator(&self) -> bool {
        matches!(self, ThresholdPolicy::Instant { .. })
    }
}

/// `κ_t = β · mean(top-1 confidences on labeled data)`.
pub fn relative_threshold(confidences: &[f64], beta: f64) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::InvalidInput("no labeled confidences".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidInput(format!("confidence {c} outside [0, 1]")));
    }
    let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
    Ok(mean * beta)
}

/// `min[1, T̂_kk·P̂(Y=s|x) + Σ_{i≠k} T̂_ik·P̂(Y=i|x) + κ]` with `s` the
/// largest clean posterior other than `k`.
pub fn instant_threshold(t_hat: &TransitionMatrix, clean: &ProbVector, k: usize, kappa: f64) -> Result<f64> {
    let n = t_hat.num_classes();
    check_dim(n, clean.len())?;
    if k >= n {
        return Err(Error::InvalidInput(format!("class {k} out of range")));
    }
    let p = clean.as_slice();
    let s = clean.argmax_excluding(k);
    let mut total = t_hat.get(k, k) * p[s];
    for i in (0..n).filter(|&i| i != k) {
        total += t_hat.get(i, k) * p[i];
    }
    Ok((total + kappa).min(1.0))
}

/// Per-instance inputs of the instance-dependent threshold.
#[derive(Debug, Clone, Copy)]
pub struct InstanceContext<'a> {
    pub t_hat: &'a TransitionMatrix,
    pub clean: &'a ProbVector,
    pub k: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AcceptContext<'a> {
    pub kappa: f64,
    pub instance: Option<InstanceContext<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub accepted: bool,
    pub tau: f64,
}

/// Strict `confidence > τ` under the given policy.
pub fn accept(policy: &ThresholdPolicy, confidence: f64, ctx: &AcceptContext<'_>) -> Result<Acceptance> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::InvalidInput(format!("confidence {confidence} outside [0, 1]")));
    }
    let tau = match policy {
        ThresholdPolicy::Fixed { tau } => *tau,
        ThresholdPolicy::Relative { .. } => ctx.kappa,
        ThresholdPolicy::Instant { .. } => {
            let inst = ctx.instance.ok_or_else(|| {
                Error::Config("instance-dependent policy requires a transition estimate".into())
            })?;
            instant_threshold(inst.t_hat, inst.clean, inst.k, ctx.kappa)?
        }
    };
    Ok(Acceptance { accepted: confidence > tau, tau })
}
