use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `x + σ_w·z` with `z` standard normal per coordinate.
pub fn weak_augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect()
}

/// Zeroes each coordinate with probability `drop`, then adds `σ_s·z`.
pub fn strong_augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, drop: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let dropped = rng.random::<f64>() < drop;
            let z: f64 = StandardNormal.sample(rng);
            (if dropped { 0.0 } else { *v }) + sigma * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_scale_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.5, -2.0, 0.25];
        assert_eq!(weak_augment(&x, 0.0, &mut rng), x.to_vec());
        assert_eq!(strong_augment(&x, 0.0, 0.0, &mut rng), x.to_vec());
    }

    #[test]
    fn full_drop_leaves_only_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![100.0; 2000];
        let out = strong_augment(&x, 0.5, 1.0, &mut rng);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!(mean.abs() < 0.1);
        assert!(out.iter().all(|v| v.abs() < 5.0));
    }

    #[test]
    fn weak_variance_matches_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sigma = 0.3;
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let out = weak_augment(&[1.0, -1.0], sigma, &mut rng);
            for c in 0..2 {
                let d = out[c] - [1.0, -1.0][c];
                sum[c] += d;
                sq[c] += d * d;
            }
        }
        let var_true = sigma * sigma;
        // the sample variance of a normal has standard deviation σ²·√(2/(n−1))
        let sd = var_true * (2.0 / (n as f64 - 1.0)).sqrt();
        for c in 0..2 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] - n as f64 * mean * mean) / (n as f64 - 1.0);
            assert!((var - var_true).abs() < 3.0 * sd, "coordinate {c}: {var}");
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let a = strong_augment(&[1.0, 2.0, 3.0], 0.4, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = strong_augment(&[1.0, 2.0, 3.0], 0.4, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
