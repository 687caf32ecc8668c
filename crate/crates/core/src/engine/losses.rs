use super::align::{distribution_alignment, DaState};
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::noise::{forward_corrected_loss, TransitionEstimator, TransitionMatrix};
use crate::numerics::{cross_entropy, softmax, MlpGradient, MlpModel, ProbVector};
use crate::synthdata::LabeledExample;
use crate::thresholds::{accept, AcceptContext, InstanceContext, ThresholdPolicy};

/// Mean cross-entropy over (already perturbed) labeled examples, with its gradient.
pub fn supervised_loss(model: &MlpModel, batch: &[LabeledExample]) -> Result<(f64, MlpGradient)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty labeled batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = model.zero_gradient();
    let mut loss = 0.0;
    for ex in batch {
        let (logits, cache) = model.forward(&ex.features)?;
        let p = softmax(&logits, 1.0)?;
        let k = p.len();
        if ex.label >= k {
            return Err(Error::InvalidInput(format!("label {} out of range", ex.label)));
        }
        let target = ProbVector::one_hot(k, ex.label);
        loss += cross_entropy(target.as_slice(), p.as_slice())? * scale;
        let dlogits: Vec<f64> = p.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect();
        model.backward_into(&cache, &dlogits, scale, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Where the transition matrix for an unlabeled instance comes from.
#[derive(Debug, Clone, Copy)]
pub enum TransitionSource<'a> {
    /// No estimate: policies that need one fail with a configuration error.
    Absent,
    /// `T̂(x)` from the estimator head.
    Instance(&'a TransitionEstimator),
    /// One matrix for every instance.
    Shared(&'a TransitionMatrix),
}

impl TransitionSource<'_> {
    fn at(&self, x: &[f64]) -> Result<Option<TransitionMatrix>> {
        match self {
            TransitionSource::Absent => Ok(None),
            TransitionSource::Instance(est) => est.head(x).map(Some),
            TransitionSource::Shared(t) => Ok(Some((*t).clone())),
        }
    }
}

/// Masking decision for one unlabeled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub label: usize,
    pub confidence: f64,
    pub tau: f64,
    pub accepted: bool,
    /// Clean-posterior estimate after temperature scaling and alignment.
    pub clean: ProbVector,
    /// Matrix used for the threshold and the corrected loss, if any.
    pub transition: Option<TransitionMatrix>,
}

/// Pseudo-labels and acceptance for a batch of weak views. The alignment
/// state is read but not updated.
///
/// Under the instance-dependent policy the clean estimate `c` is mapped to
/// `T̂ᵀc`; its argmax is the pseudo-label and its top entry the confidence.
/// Other policies use `c` directly.
pub fn pseudo_label_batch(
    model: &MlpModel,
    source: TransitionSource<'_>,
    weak_views: &[Vec<f64>],
    kappa: f64,
    da: Option<&DaState>,
    config: &TrainConfig,
) -> Result<(Vec<PseudoLabel>, Vec<ProbVector>)> {
    let mut labels = Vec::with_capacity(weak_views.len());
    let mut raw = Vec::with_capacity(weak_views.len());
    for x in weak_views {
        let c_raw = softmax(&model.logits(x)?, config.temperature)?;
        let clean = match da {
            Some(state) => distribution_alignment(&c_raw, state)?,
            None => c_raw.clone(),
        };
        raw.push(c_raw);
        let label = match config.policy {
            ThresholdPolicy::Instant { .. } => {
                let t = source.at(x)?.ok_or_else(|| {
                    Error::Config("instance-dependent policy requires a transition estimate".into())
                })?;
                let noisy = t.noisy_posterior(&clean)?;
                let k = noisy.argmax();
                let confidence = noisy.as_slice()[k];
                let ctx = AcceptContext {
                    kappa,
                    instance: Some(InstanceContext { t_hat: &t, clean: &clean, k }),
                };
                let decision = accept(&config.policy, confidence, &ctx)?;
                PseudoLabel {
                    label: k,
                    confidence,
                    tau: decision.tau,
                    accepted: decision.accepted,
                    clean,
                    transition: Some(t),
                }
            }
            _ => {
                let k = clean.argmax();
                let confidence = clean.as_slice()[k];
                let decision = accept(&config.policy, confidence, &AcceptContext { kappa, instance: None })?;
                PseudoLabel {
                    label: k,
                    confidence,
                    tau: decision.tau,
                    accepted: decision.accepted,
                    clean,
                    transition: None,
                }
            }
        };
        labels.push(label);
    }
    Ok((labels, raw))
}

#[derive(Debug, Clone)]
pub struct UnsupervisedOutput {
    /// Sum of accepted corrected losses divided by the full batch size.
    pub loss: f64,
    pub gradient: MlpGradient,
    pub labels: Vec<PseudoLabel>,
    pub utilization: f64,
    pub mean_tau: f64,
}

/// Masked, forward-corrected consistency loss: pseudo-labels from the weak
/// views, loss on the strong views. Updates the alignment state when given.
pub fn unsupervised_loss(
    model: &MlpModel,
    source: TransitionSource<'_>,
    weak_views: &[Vec<f64>],
    strong_views: &[Vec<f64>],
    kappa: f64,
    da: Option<&mut DaState>,
    config: &TrainConfig,
) -> Result<UnsupervisedOutput> {
    if weak_views.is_empty() {
        return Err(Error::InvalidInput("empty unlabeled batch".into()));
    }
    if weak_views.len() != strong_views.len() {
        return Err(Error::DimensionMismatch { expected: weak_views.len(), got: strong_views.len() });
    }
    let (labels, raw) = pseudo_label_batch(model, source, weak_views, kappa, da.as_deref(), config)?;
    if let Some(state) = da {
        state.update(&raw)?;
    }

    let m = weak_views.len() as f64;
    let mut grad = model.zero_gradient();
    let mut loss = 0.0;
    let mut accepted = 0usize;
    for (pl, xs) in labels.iter().zip(strong_views) {
        if !pl.accepted {
            continue;
        }
        accepted += 1;
        let (logits, cache) = model.forward(xs)?;
        let p = softmax(&logits, 1.0)?;
        let k = p.len();
        let target = ProbVector::one_hot(k, pl.label);
        let identity;
        let t = match &pl.transition {
            Some(t) => t,
            None => {
                identity = TransitionMatrix::identity(k);
                &identity
            }
        };
        let (l, dlogits) = forward_corrected_loss(target.as_slice(), t, &p)?;
        loss += l / m;
        model.backward_into(&cache, &dlogits, 1.0 / m, &mut grad)?;
    }
    let mean_tau = labels.iter().map(|l| l.tau).sum::<f64>() / m;
    Ok(UnsupervisedOutput { loss, gradient: grad, utilization: accepted as f64 / m, mean_tau, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Layer, Matrix};
    use crate::thresholds::MatrixSource;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(weights: Vec<f64>, bias: Vec<f64>, k: usize, d: usize) -> MlpModel {
        let layer = Layer { weights: Matrix::from_vec(k, d, weights).unwrap(), bias };
        MlpModel::from_layers(vec![layer], Activation::Tanh).unwrap()
    }

    fn fixed(tau: f64) -> TrainConfig {
        TrainConfig { policy: ThresholdPolicy::Fixed { tau }, temperature: 1.0, ..Default::default() }
    }

    #[test]
    fn uniform_model_costs_ln_k() {
        let model = MlpModel::zeros(&[2, 4], Activation::Tanh).unwrap();
        let batch: Vec<LabeledExample> =
            (0..4).map(|c| LabeledExample { features: vec![c as f64, 1.0], label: c }).collect();
        let (loss, _) = supervised_loss(&model, &batch).unwrap();
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-14);
        assert!(supervised_loss(&model, &[]).is_err());
    }

    #[test]
    fn confident_correct_model_costs_nothing() {
        let model = linear(vec![60.0, -60.0], vec![0.0, 0.0], 2, 1);
        let batch = vec![LabeledExample { features: vec![1.0], label: 0 }];
        assert!(supervised_loss(&model, &batch).unwrap().0 < 1e-12);
    }

    #[test]
    fn supervised_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = MlpModel::new(&[3, 8, 3], Activation::Tanh, &mut rng).unwrap();
        let batch: Vec<LabeledExample> = (0..5)
            .map(|i| LabeledExample { features: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), label: i % 3 })
            .collect();
        let (_, grad) = supervised_loss(&model, &batch).unwrap();
        let flat = grad.to_flat();
        let h = 1e-5;
        for i in 0..model.param_count() {
            let orig = model.param(i);
            model.set_param(i, orig + h);
            let up = supervised_loss(&model, &batch).unwrap().0;
            model.set_param(i, orig - h);
            let down = supervised_loss(&model, &batch).unwrap().0;
            model.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - flat[i]).abs() <= 1e-4 * fd.abs().max(flat[i].abs()).max(1e-6), "param {i}");
        }
    }

    #[test]
    fn nothing_accepted_means_no_signal() {
        let model = linear(vec![1.0, -1.0], vec![0.0, 0.0], 2, 1);
        let views = vec![vec![0.1], vec![-0.2]];
        let out = unsupervised_loss(&model, TransitionSource::Absent, &views, &views, 0.0, None, &fixed(1.0)).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.gradient.max_abs(), 0.0);
        assert_eq!(out.utilization, 0.0);
    }

    #[test]
    fn single_accepted_instance_with_identity_is_plain_cross_entropy() {
        let model = linear(vec![3.0, -3.0], vec![0.0, 0.0], 2, 1);
        let weak = vec![vec![1.0]];
        let strong = vec![vec![0.3]];
        let id = TransitionMatrix::identity(2);
        let cfg = TrainConfig {
            policy: ThresholdPolicy::Instant { beta: 0.5, source: MatrixSource::ClassReduced },
            temperature: 1.0,
            ..Default::default()
        };
        let out = unsupervised_loss(&model, TransitionSource::Shared(&id), &weak, &strong, 0.5, None, &cfg).unwrap();
        assert_eq!(out.utilization, 1.0);
        let p = softmax(&model.logits(&strong[0]).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(out.loss, -p.as_slice()[0].ln(), epsilon = 1e-14);
    }

    #[test]
    fn instant_without_estimate_is_a_configuration_error() {
        let model = linear(vec![1.0, -1.0], vec![0.0, 0.0], 2, 1);
        let views = vec![vec![0.1]];
        let cfg = TrainConfig::default();
        let err = unsupervised_loss(&model, TransitionSource::Absent, &views, &views, 0.5, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mask_matches_independent_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = MlpModel::new(&[2, 16, 3], Activation::Tanh, &mut rng).unwrap();
        let est = TransitionEstimator::new(2, 3, &[8], Activation::Tanh, &mut rng).unwrap();
        let weak: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let strong = weak.clone();
        let kappa = 0.05;
        let cfg = TrainConfig { temperature: 0.5, ..Default::default() };
        let out = unsupervised_loss(&model, TransitionSource::Instance(&est), &weak, &strong, kappa, None, &cfg).unwrap();

        let mut expected = Vec::new();
        for x in &weak {
            // direct evaluation of the threshold formula
            let logits = model.logits(x).unwrap();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| ((z - mx) / 0.5).exp()).collect();
            let c: Vec<f64> = e.iter().map(|v| v / e.iter().sum::<f64>()).collect();
            let t = est.head(x).unwrap();
            let n: Vec<f64> = (0..3).map(|j| (0..3).map(|i| t.get(i, j) * c[i]).sum()).collect();
            let k = (0..3).fold(0, |b, j| if n[j] > n[b] { j } else { b });
            let s = (0..3).filter(|&i| i != k).fold(None, |b: Option<usize>, i| match b {
                Some(b) if c[b] >= c[i] => Some(b),
                _ => Some(i),
            }).unwrap();
            let mut tau = t.get(k, k) * c[s] + kappa;
            for i in (0..3).filter(|&i| i != k) {
                tau += t.get(i, k) * c[i];
            }
            expected.push(n[k] > tau.min(1.0));
        }
        let got: Vec<bool> = out.labels.iter().map(|l| l.accepted).collect();
        assert_eq!(got, expected);
        assert!(got.iter().any(|a| *a) && got.iter().any(|a| !*a), "scan should exercise both outcomes");
    }

    #[test]
    fn unsupervised_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = MlpModel::new(&[2, 6, 3], Activation::Tanh, &mut rng).unwrap();
        let t = TransitionMatrix::from_rows(&[vec![0.8, 0.1, 0.1], vec![0.2, 0.7, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let weak: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let strong: Vec<Vec<f64>> = weak.iter().map(|x| x.iter().map(|v| v + 0.3).collect()).collect();
        let cfg = TrainConfig {
            policy: ThresholdPolicy::Instant { beta: 0.5, source: MatrixSource::ClassReduced },
            ..Default::default()
        };
        let base = unsupervised_loss(&model, TransitionSource::Shared(&t), &weak, &strong, 0.0, None, &cfg).unwrap();
        assert!(base.utilization > 0.0);
        let mask: Vec<usize> = base.labels.iter().map(|l| if l.accepted { l.label } else { usize::MAX }).collect();
        // hold the mask and pseudo-labels fixed while probing the strong-view loss
        let strong_loss = |m: &MlpModel| -> f64 {
            let mut total = 0.0;
            for (xs, &k) in strong.iter().zip(&mask) {
                if k == usize::MAX {
                    continue;
                }
                let p = softmax(&m.logits(xs).unwrap(), 1.0).unwrap();
                total += forward_corrected_loss(ProbVector::one_hot(3, k).as_slice(), &t, &p).unwrap().0;
            }
            total / strong.len() as f64
        };
        assert_abs_diff_eq!(strong_loss(&model), base.loss, epsilon = 1e-13);
        let flat = base.gradient.to_flat();
        let h = 1e-5;
        for i in 0..model.param_count() {
            let orig = model.param(i);
            model.set_param(i, orig + h);
            let up = strong_loss(&model);
            model.set_param(i, orig - h);
            let down = strong_loss(&model);
            model.set_param(i, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - flat[i]).abs() <= 1e-4 * fd.abs().max(flat[i].abs()).max(1e-6), "param {i}");
        }
    }

    #[test]
    fn fixed_utilization_shrinks_as_threshold_rises() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = MlpModel::new(&[2, 16, 3], Activation::Tanh, &mut rng).unwrap();
        let views: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let mut last = f64::INFINITY;
        for i in 1..=20 {
            let cfg = fixed(i as f64 / 20.0);
            let out = unsupervised_loss(&model, TransitionSource::Absent, &views, &views, 0.0, None, &cfg).unwrap();
            assert!(out.utilization <= last);
            last = out.utilization;
        }
    }

    #[test]
    fn alignment_state_advances_with_each_batch() {
        let model = linear(vec![2.0, -2.0], vec![0.0, 0.0], 2, 1);
        let views = vec![vec![1.0], vec![0.5]];
        let mut da = DaState::new(ProbVector::uniform(2), 0.5).unwrap();
        unsupervised_loss(&model, TransitionSource::Absent, &views, &views, 0.0, Some(&mut da), &fixed(0.9)).unwrap();
        assert!(da.running().as_slice()[0] > 0.5);
    }
}
