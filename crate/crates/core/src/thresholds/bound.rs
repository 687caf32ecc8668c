use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::ProbVector;

use super::TsybakovFit;

/// `max(0, 1 − C·(ε/T_kk)^α)`: lower bound on the chance that an accepted
/// pseudo-label agrees with the Bayes-optimal label.
pub fn correctness_bound(epsilon: f64, c: f64, alpha: f64, t_kk: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} must be non-negative")));
    }
    if !(c > 0.0 && c.is_finite()) || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("C = {c} and alpha = {alpha} must be positive")));
    }
    if !(t_kk > 0.0 && t_kk <= 1.0) {
        return Err(Error::InvalidInput(format!("T_kk = {t_kk} outside (0, 1]")));
    }
    Ok((1.0 - c * (epsilon / t_kk).powf(alpha)).clamp(0.0, 1.0))
}

/// Sup-norm distance between paired posterior sets.
pub fn measure_epsilon(model: &[ProbVector], truth: &[ProbVector]) -> Result<f64> {
    check_dim(model.len(), truth.len())?;
    let mut eps = 0.0f64;
    for (a, b) in model.iter().zip(truth) {
        check_dim(a.len(), b.len())?;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            eps = eps.max((x - y).abs());
        }
    }
    Ok(eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBound {
    pub epsilon: f64,
    pub t_kk: f64,
    pub bound: f64,
    pub assumption_violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
    pub per_instance: Vec<InstanceBound>,
    /// Mean of the per-instance bounds over accepted instances.
    pub aggregate_bound: f64,
    /// Fraction of accepted instances whose pseudo-label equals the Bayes label.
    pub empirical_rate: f64,
    pub n_accepted: usize,
    /// True when ε was not measured against an exact noisy posterior.
    pub proxy: bool,
}

impl BoundReport {
    /// `accepted` holds `(T_kk, min_i T_ii, pseudo-label is Bayes-optimal)` per accepted instance.
    pub fn build(epsilon: f64, fit: &TsybakovFit, accepted: &[(f64, f64, bool)], proxy: bool) -> Result<Self> {
        let mut per_instance = Vec::with_capacity(accepted.len());
        for &(t_kk, min_diag, _) in accepted {
            let bound = correctness_bound(epsilon, fit.c, fit.alpha, t_kk)?;
            per_instance.push(InstanceBound {
                epsilon,
                t_kk,
                bound,
                assumption_violated: epsilon > fit.delta0 * min_diag,
            });
        }
        let n = accepted.len();
        let (aggregate_bound, empirical_rate) = if n == 0 {
            (0.0, 0.0)
        } else {
            (
                per_instance.iter().map(|b| b.bound).sum::<f64>() / n as f64,
                accepted.iter().filter(|a| a.2).count() as f64 / n as f64,
            )
        };
        Ok(Self {
            epsilon,
            c: fit.c,
            alpha: fit.alpha,
            per_instance,
            aggregate_bound,
            empirical_rate,
            n_accepted: n,
            proxy,
        })
    }

    pub fn any_violation(&self) -> bool {
        self.per_instance.iter().any(|b| b.assumption_violated)
    }

    /// Binomial standard deviation of the empirical rate at the bound.
    pub fn sigma(&self) -> f64 {
        if self.n_accepted == 0 {
            return 0.0;
        }
        let p = self.aggregate_bound;
        (p * (1.0 - p) / self.n_accepted as f64).sqrt()
    }

    /// `empirical_rate ≥ aggregate_bound − z·σ`.
    pub fn holds(&self, z: f64) -> bool {
        self.empirical_rate >= self.aggregate_bound - z * self.sigma()
    }
}
