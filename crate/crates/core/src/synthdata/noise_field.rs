use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixture::MixtureSpec;
use crate::error::{check_dim, Error, Result};
use crate::noise::TransitionMatrix;
use crate::numerics::Matrix;

/// Shape of an instance-dependent noise process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Every clean class flips to each other class with probability `strength / (K−1)`.
    UniformFlip,
    /// Off-diagonal mass `strength · σ(sharpness · (1 − margin(x))) / (K−1)`, where
    /// `margin(x)` is the gap between the two largest clean posteriors.
    MarginBased { sharpness: f64 },
    /// Class `i` flips to `pairs[i]` with probability `strength`.
    ConfusionPair { pairs: Vec<usize> },
}

/// A noise process `x ↦ T(x)` defined relative to a [`MixtureSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub strength: f64,
}

impl NoiseField {
    pub fn none() -> Self {
        Self { kind: NoiseKind::UniformFlip, strength: 0.0 }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.strength) {
            return Err(Error::InvalidInput(format!("noise strength {} outside [0, 1)", self.strength)));
        }
        match &self.kind {
            NoiseKind::UniformFlip => {}
            NoiseKind::MarginBased { sharpness } => {
                if !(sharpness.is_finite() && *sharpness > 0.0) {
                    return Err(Error::InvalidInput(format!("sharpness {sharpness} must be positive")));
                }
            }
            NoiseKind::ConfusionPair { pairs } => {
                check_dim(num_classes, pairs.len())?;
                for (i, &j) in pairs.iter().enumerate() {
                    if j >= num_classes || j == i {
                        return Err(Error::InvalidInput(format!("invalid confusion pair {i} -> {j}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Strength below which every `T(x)` has full rank.
    ///
    /// Uniform and margin-based fields put total off-diagonal mass `a < strength`
    /// on each row, symmetrically, so `T` has eigenvalues `1` and `1 − aK/(K−1)`.
    /// Confusion pairs stay strictly diagonally dominant while `strength < 1/2`.
    pub fn informative_strength_limit(&self, num_classes: usize) -> f64 {
        match self.kind {
            NoiseKind::UniformFlip | NoiseKind::MarginBased { .. } => {
                (num_classes as f64 - 1.0) / num_classes as f64
            }
            NoiseKind::ConfusionPair { .. } => 0.5,
        }
    }

    pub fn is_informative_regime(&self, num_classes: usize) -> bool {
        self.strength < self.informative_strength_limit(num_classes)
    }

    /// `T(x)` for this field.
    pub fn transition_at(&self, spec: &MixtureSpec, x: &[f64]) -> Result<TransitionMatrix> {
        let k = spec.num_classes();
        self.validate(k)?;
        let mut m = Matrix::zeros(k, k);
        match &self.kind {
            NoiseKind::UniformFlip => fill_symmetric(&mut m, self.strength / (k as f64 - 1.0)),
            NoiseKind::MarginBased { sharpness } => {
                let margin = spec.clean_posterior(x)?.margin();
                let off = self.strength * logistic(sharpness * (1.0 - margin)) / (k as f64 - 1.0);
                fill_symmetric(&mut m, off);
            }
            NoiseKind::ConfusionPair { pairs } => {
                for (i, &j) in pairs.iter().enumerate() {
                    m.set(i, i, 1.0 - self.strength);
                    m.set(i, j, self.strength);
                }
            }
        }
        TransitionMatrix::new(m)
    }

    /// Draws a noisy label for each `(x, y)` pair.
    pub fn corrupt<R: Rng + ?Sized>(
        &self,
        spec: &MixtureSpec,
        examples: &[super::LabeledExample],
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        examples
            .iter()
            .map(|ex| Ok(sample_noisy_label(&self.transition_at(spec, &ex.features)?, ex.label, rng)))
            .collect()
    }
}

fn fill_symmetric(m: &mut Matrix, off: f64) {
    let k = m.rows();
    for i in 0..k {
        for j in 0..k {
            m.set(i, j, if i == j { 1.0 - off * (k as f64 - 1.0) } else { off });
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Draws `ŷ` with probability `T[y][ŷ]`.
pub fn sample_noisy_label<R: Rng + ?Sized>(t: &TransitionMatrix, clean: usize, rng: &mut R) -> usize {
    let row = t.row(clean);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::informative_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec3() -> MixtureSpec {
        MixtureSpec::symmetric(3, 2, 3.0, 1.0).unwrap()
    }

    fn fields() -> Vec<NoiseField> {
        vec![
            NoiseField { kind: NoiseKind::UniformFlip, strength: 0.3 },
            NoiseField { kind: NoiseKind::MarginBased { sharpness: 4.0 }, strength: 0.6 },
            NoiseField { kind: NoiseKind::ConfusionPair { pairs: vec![1, 2, 0] }, strength: 0.4 },
        ]
    }

    #[test]
    fn zero_strength_is_identity() {
        let spec = spec3();
        for mut f in fields() {
            f.strength = 0.0;
            assert_eq!(f.transition_at(&spec, &[0.1, 0.2]).unwrap(), TransitionMatrix::identity(3));
        }
    }

    #[test]
    fn margin_based_noise_is_heavier_near_the_boundary() {
        // 2 classes: margin = |2η − 1|. Pick points with margins 0.1 and 0.9.
        let spec = MixtureSpec::new(vec![vec![-1.0], vec![1.0]], 1.0, vec![0.5, 0.5]).unwrap();
        // η₁(x) = σ(2x) for means ±1 and unit variance, so margin m sits at x = ln((1+m)/(1−m)) / 2.
        let x_for = |m: f64| ((1.0 + m) / (1.0 - m)).ln() / 2.0;
        let field = NoiseField { kind: NoiseKind::MarginBased { sharpness: 5.0 }, strength: 0.4 };
        let hard = field.transition_at(&spec, &[x_for(0.1)]).unwrap();
        let easy = field.transition_at(&spec, &[x_for(0.9)]).unwrap();
        assert!((spec.clean_posterior(&[x_for(0.1)]).unwrap().margin() - 0.1).abs() < 1e-12);
        let expect_hard = 0.4 / (1.0 + (-5.0f64 * 0.9).exp());
        let expect_easy = 0.4 / (1.0 + (-5.0f64 * 0.1).exp());
        assert!((hard.get(0, 1) - expect_hard).abs() < 1e-12);
        assert!((easy.get(0, 1) - expect_easy).abs() < 1e-12);
        assert!(hard.get(0, 1) > easy.get(0, 1));
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let spec = spec3();
        let bad = [
            NoiseField { kind: NoiseKind::UniformFlip, strength: 1.0 },
            NoiseField { kind: NoiseKind::MarginBased { sharpness: 0.0 }, strength: 0.1 },
            NoiseField { kind: NoiseKind::ConfusionPair { pairs: vec![0, 2, 1] }, strength: 0.1 },
            NoiseField { kind: NoiseKind::ConfusionPair { pairs: vec![1, 2] }, strength: 0.1 },
        ];
        for f in bad {
            assert!(f.transition_at(&spec, &[0.0, 0.0]).is_err());
        }
    }

    #[test]
    fn identity_never_flips_and_sampling_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = TransitionMatrix::identity(4);
        for y in 0..4 {
            for _ in 0..100 {
                assert_eq!(sample_noisy_label(&t, y, &mut rng), y);
            }
        }
        let t = TransitionMatrix::uniform(4);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_noisy_label(&t, 0, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn binary_row_frequency_within_three_sigma() {
        let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_noisy_label(&t, 0, &mut rng) == 1).count();
        let freq = ones as f64 / n as f64;
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        assert!((freq - 0.2).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn noise_below_limit_is_informative() {
        let spec = spec3();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for f in fields() {
            assert!(f.is_informative_regime(3));
            for _ in 0..50 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                assert!(informative_check(&f.transition_at(&spec, &x).unwrap()).informative);
            }
        }
        let at_limit = NoiseField { kind: NoiseKind::UniformFlip, strength: 2.0 / 3.0 };
        assert!(!at_limit.is_informative_regime(3));
        assert!(!informative_check(&at_limit.transition_at(&spec, &[0.0, 0.0]).unwrap()).informative);
    }

    #[test]
    fn serde_shape() {
        let f = NoiseField { kind: NoiseKind::MarginBased { sharpness: 3.0 }, strength: 0.5 };
        let json = serde_json::to_value(&f).unwrap();
        assert_eq!(json, serde_json::json!({"kind": "margin_based", "sharpness": 3.0, "strength": 0.5}));
        let back: NoiseField = serde_json::from_value(json).unwrap();
        assert_eq!(back, f);
    }

    proptest! {
        #[test]
        fn every_field_is_row_stochastic(
            x in prop::collection::vec(-5.0f64..5.0, 2),
            strength in 0.0f64..0.999,
            sharpness in 0.1f64..20.0,
            which in 0usize..3,
        ) {
            let spec = spec3();
            let kind = match which {
                0 => NoiseKind::UniformFlip,
                1 => NoiseKind::MarginBased { sharpness },
                _ => NoiseKind::ConfusionPair { pairs: vec![2, 0, 1] },
            };
            let t = NoiseField { kind, strength }.transition_at(&spec, &x).unwrap();
            for i in 0..3 {
                let s: f64 = t.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(t.row(i).iter().all(|v| *v >= 0.0));
            }
        }
    }
}
