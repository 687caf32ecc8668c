use instant_core::engine::*;
use instant_core::numerics::{Activation, MlpModel};
use instant_core::synthdata::{generate, LabeledExample, MixtureSpec, NoiseField, NoiseKind, SslDataset};
use instant_core::thresholds::{MatrixSource, ThresholdPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64) -> SslDataset {
    let spec = MixtureSpec::symmetric(3, 2, 3.0, 1.0).unwrap();
    generate(&spec, 4, 400, 300, seed).unwrap()
}

fn small_config(policy: ThresholdPolicy) -> TrainConfig {
    TrainConfig {
        policy,
        hidden: vec![16],
        log_every: 50,
        warmup_steps: 50,
        eval_points: 200,
        ..TrainConfig::default()
    }
    .with_iterations(200)
}

fn instant() -> ThresholdPolicy {
    ThresholdPolicy::Instant { beta: 0.9, source: MatrixSource::Instance }
}

fn ground_truth(ds: &SslDataset) -> GroundTruth {
    let noise = NoiseField { kind: NoiseKind::MarginBased { sharpness: 4.0 }, strength: 0.5 };
    GroundTruth::new(ds.mixture().unwrap().clone(), noise).unwrap()
}

#[test]
fn zero_lambda_matches_supervised_only() {
    let ds = dataset(1);
    for policy in [instant(), ThresholdPolicy::Relative { beta: 0.9 }, ThresholdPolicy::Fixed { tau: 0.95 }] {
        let cfg = TrainConfig { lambda: 0.0, ..small_config(policy) };
        let semi = train(&ds, &cfg, None).unwrap();
        let sup = train_supervised(&ds, &cfg).unwrap();
        assert_eq!(semi.model, sup.model, "{}", policy.kind_name());
        assert_eq!(semi.summary.final_test_acc, sup.summary.final_test_acc);
    }
}

#[test]
fn repeated_runs_write_identical_csv() {
    let ds = dataset(2);
    let gt = ground_truth(&ds);
    let cfg = small_config(instant());
    let a = train(&ds, &cfg, Some(&gt)).unwrap().metrics.to_csv_string();
    let b = train(&ds, &cfg, Some(&gt)).unwrap().metrics.to_csv_string();
    assert_eq!(a.as_bytes(), b.as_bytes());
    let other = TrainConfig { seed: 1, ..cfg };
    assert_ne!(a, train(&ds, &other, Some(&gt)).unwrap().metrics.to_csv_string());
}

#[test]
fn latent_labels_do_not_influence_training() {
    let ds = dataset(3);
    let zeroed = ds.with_latent_labels_zeroed();
    let cfg = small_config(instant());
    let a = train(&ds, &cfg, None).unwrap();
    let b = train(&zeroed, &cfg, None).unwrap();
    assert_eq!(a.model, b.model);
    for (ra, rb) in a.metrics.rows.iter().zip(&b.metrics.rows) {
        assert_eq!(ra.test_acc, rb.test_acc);
        assert_eq!(ra.util, rb.util);
        assert_eq!(ra.loss, rb.loss);
    }
    // only the evaluation column sees the change
    assert!(a.metrics.rows.iter().zip(&b.metrics.rows).any(|(ra, rb)| ra.pl_acc != rb.pl_acc));
}

#[test]
fn logged_loss_is_supervised_plus_weighted_unsupervised() {
    let ds = dataset(4);
    let cfg = TrainConfig { lambda: 0.5, ..small_config(ThresholdPolicy::Relative { beta: 0.8 }) };
    let out = train(&ds, &cfg, None).unwrap();
    assert!(!out.metrics.rows.is_empty());
    for row in &out.metrics.rows {
        assert_eq!(row.loss, row.sup_loss + 0.5 * row.unsup_loss);
        assert!(row.sup_loss.is_finite() && row.unsup_loss >= 0.0);
    }
}

#[test]
fn evaluate_matches_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = MlpModel::new(&[2, 8, 3], Activation::Tanh, &mut rng).unwrap();
    let test: Vec<LabeledExample> = (0..500)
        .map(|_| LabeledExample {
            features: vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            label: rng.random_range(0..3),
        })
        .collect();
    let mut correct = 0;
    for ex in &test {
        let z = model.logits(&ex.features).unwrap();
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        if best == ex.label {
            correct += 1;
        }
    }
    assert_eq!(evaluate(&model, &test).unwrap(), correct as f64 / 500.0);
    assert!(evaluate(&model, &[]).is_err());
}

#[test]
fn accepted_pseudo_labels_are_more_precise_than_the_whole_batch() {
    let ds = dataset(6);
    for policy in [instant(), ThresholdPolicy::Relative { beta: 0.9 }] {
        let cfg = small_config(policy);
        let out = train(&ds, &cfg, None).unwrap();
        let xs: Vec<Vec<f64>> = ds.test().iter().map(|e| e.features.clone()).collect();
        let source = match &out.estimator {
            Some(est) => TransitionSource::Instance(est),
            None => TransitionSource::Absent,
        };
        let kappa = out.summary.final_kappa.unwrap();
        let (labels, _) = pseudo_label_batch(&out.model, source, &xs, kappa, None, &cfg).unwrap();
        let (mut all, mut acc, mut acc_ok) = (0, 0, 0);
        for (pl, ex) in labels.iter().zip(ds.test()) {
            let ok = pl.label == ex.label;
            all += usize::from(ok);
            if pl.accepted {
                acc += 1;
                acc_ok += usize::from(ok);
            }
        }
        assert!(acc > 0, "{}: nothing accepted", policy.kind_name());
        let precision = acc_ok as f64 / acc as f64;
        let overall = all as f64 / labels.len() as f64;
        assert!(precision >= overall, "{}: {precision} < {overall}", policy.kind_name());
    }
}

#[test]
fn metrics_csv_round_trips_through_disk() {
    let ds = dataset(7);
    let gt = ground_truth(&ds);
    let out = train(&ds, &small_config(instant()), Some(&gt)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    out.metrics.write_csv(&path).unwrap();
    let back = RunMetrics::read_csv(&path).unwrap();
    assert_eq!(back.to_csv_string(), out.metrics.to_csv_string());
    assert_eq!(back.rows.len(), 4);
    assert!(out.metrics.rows.iter().all(|r| r.est_l1.is_finite()));
}

#[test]
fn class_reduced_source_exposes_shared_matrix() {
    let ds = dataset(8);
    let cfg = small_config(ThresholdPolicy::Instant { beta: 0.9, source: MatrixSource::ClassReduced });
    let out = train(&ds, &cfg, None).unwrap();
    let t = out.shared_transition.expect("shared matrix");
    for i in 0..3 {
        assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(train(&ds, &small_config(instant()), None).unwrap().shared_transition.is_none());
}
