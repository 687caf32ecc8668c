use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights to sum one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self(v)
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Index of the largest entry other than `excluded`.
    pub fn argmax_excluding(&self, excluded: usize) -> usize {
        let mut best = usize::MAX;
        for (i, &p) in self.0.iter().enumerate() {
            if i != excluded && (best == usize::MAX || p > self.0[best]) {
                best = i;
            }
        }
        best
    }

    /// Gap between the largest and second-largest entries.
    pub fn margin(&self) -> f64 {
        let top = self.argmax();
        if self.0.len() < 2 {
            return 1.0;
        }
        self.0[top] - self.0[self.argmax_excluding(top)]
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax of `logits / temperature` without validation.
pub(crate) fn softmax_slice(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Temperature-scaled softmax, `exp(zᵢ/T) / Σⱼ exp(zⱼ/T)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logits".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be positive")));
    }
    Ok(ProbVector(softmax_slice(logits, temperature)))
}

/// `−Σᵢ targetᵢ · ln(max(predictedᵢ, PROB_FLOOR))`.
pub fn cross_entropy(target: &[f64], predicted: &[f64]) -> Result<f64> {
    check_dim(target.len(), predicted.len())?;
    Ok(target
        .iter()
        .zip(predicted)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * p.max(PROB_FLOOR).ln())
        .sum())
}
