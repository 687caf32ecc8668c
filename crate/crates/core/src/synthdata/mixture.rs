use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{softmax, ProbVector};

/// Isotropic Gaussian mixture with shared variance: the ground-truth generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub priors: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, variance: f64, priors: Vec<f64>) -> Result<Self> {
        let spec = Self { means, variance, priors };
        spec.validate()?;
        Ok(spec)
    }

    /// `k` equal-prior components evenly spaced on a circle of radius
    /// `separation / 2` in the first two coordinates (on a line when `dim == 1`).
    pub fn symmetric(k: usize, dim: usize, separation: f64, variance: f64) -> Result<Self> {
        if k < 2 || dim == 0 || (dim == 1 && k > 2) {
            return Err(Error::InvalidInput(format!(
                "cannot place {k} symmetric components in {dim} dimension(s)"
            )));
        }
        let radius = separation / 2.0;
        let means = (0..k)
            .map(|c| {
                let mut m = vec![0.0; dim];
                if dim == 1 {
                    m[0] = if c == 0 { -radius } else { radius };
                } else {
                    let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                    m[0] = radius * angle.cos();
                    m[1] = radius * angle.sin();
                }
                m
            })
            .collect();
        Self::new(means, variance, vec![1.0 / k as f64; k])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k < 2 {
            return Err(Error::InvalidInput("mixture needs at least two components".into()));
        }
        let dim = self.means[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        for m in &self.means {
            check_dim(dim, m.len())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite component mean".into()));
            }
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::InvalidInput(format!("variance {} must be positive", self.variance)));
        }
        check_dim(k, self.priors.len())?;
        ProbVector::new(self.priors.clone())?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Exact Bayes posterior `P(Y=i|x) ∝ πᵢ · N(x; μᵢ, σ²I)`.
    pub fn clean_posterior(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.dim(), x.len())?;
        let log_joint: Vec<f64> = self
            .means
            .iter()
            .zip(&self.priors)
            .map(|(mu, &prior)| {
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                if prior > 0.0 {
                    prior.ln() - sq / (2.0 * self.variance)
                } else {
                    f64::MIN / 2.0
                }
            })
            .collect();
        softmax(&log_joint, 1.0)
    }

    /// Bayes-optimal label `h*(x)`.
    pub fn bayes_label(&self, x: &[f64]) -> Result<usize> {
        Ok(self.clean_posterior(x)?.argmax())
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.priors.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    pub fn sample_features<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.means[class]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_class() -> MixtureSpec {
        MixtureSpec::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], 0.5, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(MixtureSpec::new(vec![vec![0.0]], 1.0, vec![1.0]).is_err());
        assert!(MixtureSpec::new(vec![vec![0.0], vec![1.0]], 0.0, vec![0.5, 0.5]).is_err());
        assert!(MixtureSpec::new(vec![vec![0.0], vec![1.0]], 1.0, vec![0.6, 0.5]).is_err());
        assert!(MixtureSpec::new(vec![vec![0.0], vec![1.0, 2.0]], 1.0, vec![0.5, 0.5]).is_err());
        assert!(MixtureSpec::symmetric(3, 1, 2.0, 1.0).is_err());
        assert_eq!(MixtureSpec::symmetric(4, 3, 2.0, 1.0).unwrap().num_classes(), 4);
    }

    #[test]
    fn equidistant_point_has_even_posterior() {
        let p = two_class().clean_posterior(&[0.0, 3.0]).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn component_mean_wins_when_well_separated() {
        let spec = MixtureSpec::symmetric(5, 2, 20.0, 0.5).unwrap();
        for (c, mu) in spec.means.iter().enumerate() {
            assert_eq!(spec.bayes_label(mu).unwrap(), c);
        }
    }

    #[test]
    fn posterior_matches_direct_density_ratio() {
        let spec = MixtureSpec::new(
            vec![vec![0.0, 0.0], vec![1.5, -0.5], vec![-1.0, 2.0]],
            0.8,
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let norm = 1.0 / (2.0 * std::f64::consts::PI * spec.variance);
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let dens: Vec<f64> = spec
                .means
                .iter()
                .zip(&spec.priors)
                .map(|(m, p)| {
                    let sq = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                    p * norm * (-sq / (2.0 * spec.variance)).exp()
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let post = spec.clean_posterior(&x).unwrap();
            for (a, d) in post.as_slice().iter().zip(&dens) {
                assert_abs_diff_eq!(*a, d / total, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn posterior_ignores_common_density_scale() {
        let spec = two_class();
        let x = [0.3, 0.2];
        let post = spec.clean_posterior(&x).unwrap();
        for scale in [1e-30, 1.0, 1e30] {
            let dens: Vec<f64> = spec
                .means
                .iter()
                .map(|m| scale * 0.5 * (-((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) / 1.0).exp())
                .collect();
            let total: f64 = dens.iter().sum();
            assert_abs_diff_eq!(post.as_slice()[0], dens[0] / total, epsilon = 1e-12);
        }
        assert!(spec.clean_posterior(&[0.0]).is_err());
    }
}
