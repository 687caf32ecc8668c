use super::transition::TransitionMatrix;
use crate::error::{check_dim, Result};
use crate::numerics::{ProbVector, PROB_FLOOR};

/// Forward-corrected cross-entropy `ℓ(ŷ, T̂ᵀ p)` where `p = softmax(z)` is the
/// model's clean-posterior estimate.
///
/// Returns the loss and its gradient with respect to the logits `z`. The
/// transition matrix is treated as a constant.
pub fn forward_corrected_loss(
    target: &[f64],
    t_hat: &TransitionMatrix,
    clean: &ProbVector,
) -> Result<(f64, Vec<f64>)> {
    let k = t_hat.num_classes();
    check_dim(k, target.len())?;
    check_dim(k, clean.len())?;
    let p = clean.as_slice();
    let noisy = t_hat.as_matrix().transpose_matvec(p)?;

    let mut loss = 0.0;
    // ∂ℓ/∂q_j, zero where the floor is active
    let mut dq = vec![0.0; k];
    for j in 0..k {
        if target[j] == 0.0 {
            continue;
        }
        let q = noisy[j].max(PROB_FLOOR);
        loss -= target[j] * q.ln();
        if noisy[j] > PROB_FLOOR {
            dq[j] = -target[j] / noisy[j];
        }
    }
    // ∂ℓ/∂p_i = Σ_j T_ij ∂ℓ/∂q_j
    let dp = t_hat.as_matrix().matvec(&dq)?;
    // softmax Jacobian: ∂ℓ/∂z_m = p_m (dp_m − Σ_i p_i dp_i)
    let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
    let grad = p.iter().zip(&dp).map(|(pm, dm)| pm * (dm - mean)).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, softmax};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_reduces_to_plain_cross_entropy() {
        let p = softmax(&[0.3, -1.0, 2.0], 1.0).unwrap();
        let target = [0.0, 1.0, 0.0];
        let (loss, grad) = forward_corrected_loss(&target, &TransitionMatrix::identity(3), &p).unwrap();
        assert_abs_diff_eq!(loss, cross_entropy(&target, p.as_slice()).unwrap(), epsilon = 1e-14);
        for m in 0..3 {
            assert_abs_diff_eq!(grad[m], p.as_slice()[m] - target[m], epsilon = 1e-14);
        }
    }

    #[test]
    fn hand_evaluated_case() {
        let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let (loss, _) = forward_corrected_loss(&[1.0, 0.0], &t, &p).unwrap();
        assert_abs_diff_eq!(loss, -(0.8f64).ln(), epsilon = 1e-15);
        assert!(forward_corrected_loss(&[1.0, 0.0, 0.0], &t, &p).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let k = rng.random_range(2..6);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let t = TransitionMatrix::from_rows(&rows).unwrap();
            let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut target = vec![0.0; k];
            target[rng.random_range(0..k)] = 1.0;
            let f = |z: &[f64]| forward_corrected_loss(&target, &t, &softmax(z, 1.0).unwrap()).unwrap().0;
            let (_, grad) = forward_corrected_loss(&target, &t, &softmax(&z, 1.0).unwrap()).unwrap();
            let h = 1e-5;
            for m in 0..k {
                let mut up = z.clone();
                up[m] += h;
                let mut down = z.clone();
                down[m] -= h;
                let numeric = (f(&up) - f(&down)) / (2.0 * h);
                let denom = grad[m].abs().max(numeric.abs()).max(1e-6);
                assert!((grad[m] - numeric).abs() / denom < 1e-4);
            }
        }
    }
}
