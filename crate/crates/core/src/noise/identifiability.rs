use serde::{Deserialize, Serialize};

use super::transition::TransitionMatrix;
use crate::error::{check_dim, Error, Result};
use crate::numerics::Matrix;

/// Singular values at or below this are treated as zero when computing rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformativeReport {
    pub informative: bool,
    pub rank: usize,
    pub min_singular_value: f64,
}

/// A noisy label is informative when its transition matrix has full rank.
pub fn informative_check(t: &TransitionMatrix) -> InformativeReport {
    let sv = t.as_matrix().singular_values();
    let rank = sv.iter().filter(|s| **s > RANK_TOLERANCE).count();
    InformativeReport {
        informative: rank == t.num_classes(),
        rank,
        min_singular_value: sv.last().copied().unwrap_or(0.0),
    }
}

/// Pointwise mean of transition matrices (row-stochastic by convexity).
pub fn class_dependent_reduce(matrices: &[TransitionMatrix]) -> Result<TransitionMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidInput("no transition matrices to reduce".into()))?;
    let k = first.num_classes();
    let mut acc = vec![0.0; k * k];
    for t in matrices {
        check_dim(k, t.num_classes())?;
        for (a, v) in acc.iter_mut().zip(t.as_matrix().data()) {
            *a += v;
        }
    }
    let n = matrices.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(TransitionMatrix::from_matrix_unchecked(Matrix::from_vec(k, k, acc)?))
}

/// Everything observable from two i.i.d. noisy binary labels of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairObservables {
    /// `P(Ŷ₁ = +1)`
    pub posterior: f64,
    /// `P(Ŷ₁ = Ŷ₂ = +1)`
    pub positive_consensus: f64,
    /// `P(Ŷ₁ = Ŷ₂ = −1)`
    pub negative_consensus: f64,
}

impl PairObservables {
    pub fn max_abs_gap(&self, other: &PairObservables) -> f64 {
        [
            self.posterior - other.posterior,
            self.positive_consensus - other.positive_consensus,
            self.negative_consensus - other.negative_consensus,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Observables of the binary flip model with clean prior `p⁺` and flip
/// rates `e₊ = P(Ŷ=−1|Y=+1)`, `e₋ = P(Ŷ=+1|Y=−1)`.
pub fn pairwise_observables(prior_positive: f64, e_plus: f64, e_minus: f64) -> Result<PairObservables> {
    for (name, v) in [("prior", prior_positive), ("e_plus", e_plus), ("e_minus", e_minus)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let p = prior_positive;
    Ok(PairObservables {
        posterior: p * (1.0 - e_plus) + (1.0 - p) * e_minus,
        positive_consensus: p * (1.0 - e_plus).powi(2) + (1.0 - p) * e_minus.powi(2),
        negative_consensus: p * e_plus.powi(2) + (1.0 - p) * (1.0 - e_minus).powi(2),
    })
}
