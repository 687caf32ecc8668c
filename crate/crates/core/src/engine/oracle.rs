use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::noise::TransitionMatrix;
use crate::numerics::ProbVector;
use crate::synthdata::{MixtureSpec, NoiseField};

/// Analytic reference for synthetic data: the generating mixture plus the
/// noise field taken as the true `T(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mixture: MixtureSpec,
    pub noise: NoiseField,
}

impl GroundTruth {
    pub fn new(mixture: MixtureSpec, noise: NoiseField) -> Result<Self> {
        mixture.validate()?;
        noise.validate(mixture.num_classes())?;
        Ok(Self { mixture, noise })
    }

    pub fn num_classes(&self) -> usize {
        self.mixture.num_classes()
    }

    pub fn clean_posterior(&self, x: &[f64]) -> Result<ProbVector> {
        self.mixture.clean_posterior(x)
    }

    pub fn transition(&self, x: &[f64]) -> Result<TransitionMatrix> {
        self.noise.transition_at(&self.mixture, x)
    }

    /// `T(x)ᵀ·P(Y|x)`.
    pub fn noisy_posterior(&self, x: &[f64]) -> Result<ProbVector> {
        self.transition(x)?.noisy_posterior(&self.clean_posterior(x)?)
    }

    pub fn bayes_label(&self, x: &[f64]) -> Result<usize> {
        self.mixture.bayes_label(x)
    }
}
