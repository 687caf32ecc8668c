use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::ProbVector;

/// Lower clamp on the running pseudo-label prior before dividing by it.
pub const DA_FLOOR: f64 = 1e-6;

/// Running pseudo-label prior and the clean prior it is aligned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaState {
    running: ProbVector,
    target: ProbVector,
    momentum: f64,
}

impl DaState {
    /// Starts the running estimate at the target prior.
    pub fn new(target: ProbVector, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("alignment momentum {momentum} must be in [0, 1)")));
        }
        Ok(Self { running: target.clone(), target, momentum })
    }

    pub fn with_running(mut self, running: ProbVector) -> Result<Self> {
        check_dim(self.target.len(), running.len())?;
        self.running = running;
        Ok(self)
    }

    pub fn running(&self) -> &ProbVector {
        &self.running
    }

    pub fn target(&self) -> &ProbVector {
        &self.target
    }

    /// `running ← m·running + (1 − m)·mean(batch)`.
    pub fn update(&mut self, batch: &[ProbVector]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let k = self.running.len();
        let mut mean = vec![0.0; k];
        for p in batch {
            check_dim(k, p.len())?;
            for (m, v) in mean.iter_mut().zip(p.as_slice()) {
                *m += v / batch.len() as f64;
            }
        }
        let mixed = self
            .running
            .as_slice()
            .iter()
            .zip(&mean)
            .map(|(r, b)| self.momentum * r + (1.0 - self.momentum) * b)
            .collect();
        self.running = ProbVector::normalized(mixed)?;
        Ok(())
    }

    /// Aligns every prediction with the current prior, then folds the raw batch into the running estimate.
    pub fn align_batch(&mut self, batch: &[ProbVector]) -> Result<Vec<ProbVector>> {
        let out = batch.iter().map(|p| distribution_alignment(p, self)).collect::<Result<Vec<_>>>()?;
        self.update(batch)?;
        Ok(out)
    }
}

/// `Norm(p ⊙ target / running)`.
pub fn distribution_alignment(probs: &ProbVector, da: &DaState) -> Result<ProbVector> {
    check_dim(da.target.len(), probs.len())?;
    let scaled: Vec<f64> = probs
        .as_slice()
        .iter()
        .zip(da.target.as_slice())
        .zip(da.running.as_slice())
        .map(|((p, t), r)| p * t / r.max(DA_FLOOR))
        .collect();
    if scaled.iter().sum::<f64>() <= 0.0 {
        return Ok(probs.clone());
    }
    ProbVector::normalized(scaled)
}
