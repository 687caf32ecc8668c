use std::path::Path;

use anyhow::Context;
use instant_core::engine::{train, GroundTruth, RunMetrics};
use instant_core::noise::{pairwise_observables, informative_check};
use instant_core::synthdata::{sample_noisy_label, SslDataset};
use instant_core::thresholds::{MatrixSource, ThresholdPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::train::{write_json, RunManifest, MANIFEST_FILE, METRICS_FILE};
use crate::config::{DatasetSection, ExperimentConfig};
use crate::data::{resolve, sidecar_path, GroundTruthSidecar};
use crate::error::CliError;

pub const REPORT_FILE: &str = "verification.json";

const COMPOSITION_POINTS: usize = 20;
const COMPOSITION_DRAWS: usize = 100_000;
/// Per-class deviation limit in binomial standard deviations. Every point and
/// class is one comparison, so this sits above the usual 3.
const COMPOSITION_Z: f64 = 4.0;
const BOUND_Z: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub library_version: String,
    pub checks: Vec<Check>,
}

pub fn run(cfg: &ExperimentConfig, out_path: &Path) -> Result<VerificationReport, CliError> {
    let sidecar = GroundTruthSidecar::read(&sidecar_path(cfg)?)?;
    if matches!(cfg.dataset, DatasetSection::Mixture { .. }) && sidecar.dataset != cfg.dataset {
        return Err(CliError::Config("ground-truth sidecar does not match the dataset section; rerun generate".into()));
    }
    let truth = sidecar.ground_truth;
    let resolved = resolve(cfg)?;
    let ds = &resolved.dataset;
    if ds.dim() != truth.mixture.dim() {
        return Err(CliError::Config("sidecar dimension does not match the dataset".into()));
    }

    let mut checks = vec![
        composition(&truth, ds)?,
        informative_census(&truth, ds)?,
        counterexample()?,
        own_bound_run(cfg, &truth, ds)?,
    ];
    checks.extend(existing_runs(&cfg.runs_dir())?);

    let report = VerificationReport {
        passed: checks.iter().all(|c| c.passed),
        library_version: instant_core::VERSION.to_string(),
        checks,
    };
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_json(out_path, &report)?;
    for c in &report.checks {
        log::info!("{}: {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    Ok(report)
}

/// Monte-Carlo noisy-label frequencies against `T(x)ᵀ P(Y|x)` at test points.
fn composition(truth: &GroundTruth, ds: &SslDataset) -> Result<Check, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    let points = ds.test().iter().take(COMPOSITION_POINTS);
    let mut n = 0;
    for ex in points {
        n += 1;
        let clean = truth.clean_posterior(&ex.features)?;
        let t = truth.transition(&ex.features)?;
        let expected = t.noisy_posterior(&clean)?;
        let k = clean.len();
        let mut counts = vec![0usize; k];
        for _ in 0..COMPOSITION_DRAWS {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = k - 1;
            for (i, p) in clean.as_slice().iter().enumerate() {
                acc += p;
                if u < acc {
                    y = i;
                    break;
                }
            }
            counts[sample_noisy_label(&t, y, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(expected.as_slice()) {
            let sigma = (p * (1.0 - p) / COMPOSITION_DRAWS as f64).sqrt();
            let dev = (*c as f64 / COMPOSITION_DRAWS as f64 - p).abs();
            if sigma > 0.0 {
                worst = worst.max(dev / sigma);
            } else if dev > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(Check {
        name: "noisy_posterior_composition".into(),
        passed: worst <= COMPOSITION_Z,
        measured: json!({ "points": n, "draws": COMPOSITION_DRAWS, "max_sigma": worst, "limit_sigma": COMPOSITION_Z }),
    })
}

fn informative_census(truth: &GroundTruth, ds: &SslDataset) -> Result<Check, CliError> {
    let k = ds.num_classes();
    let mut per_class = vec![0usize; k];
    let mut min_sv = f64::INFINITY;
    for ex in ds.labeled() {
        let report = informative_check(&truth.transition(&ex.features)?);
        min_sv = min_sv.min(report.min_singular_value);
        if report.informative {
            per_class[ex.label] += 1;
        }
    }
    // three informative labels per class identify T
    let passed = per_class.iter().all(|&c| c >= 3);
    Ok(Check {
        name: "informative_labels".into(),
        passed,
        measured: json!({
            "labeled": ds.labeled().len(),
            "informative_per_class": per_class,
            "min_singular_value": min_sv,
        }),
    })
}

fn counterexample() -> Result<Check, CliError> {
    let a = pairwise_observables(0.7, 0.2, 0.2)?;
    let b = pairwise_observables(0.8, 0.242, 0.07)?;
    let gap = a.max_abs_gap(&b);
    Ok(Check {
        name: "pairwise_non_identifiability".into(),
        passed: gap < 1e-2,
        measured: json!({ "first": a, "second": b, "max_gap": gap }),
    })
}

fn bound_rows(metrics: &RunMetrics, warmup: usize) -> (usize, Vec<Value>, f64) {
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut min_margin = f64::INFINITY;
    for row in metrics.after_warmup(warmup) {
        checked += 1;
        if !row.bound.is_finite() || row.bound_n == 0 {
            failures.push(json!({ "iter": row.iter, "reason": "no bound" }));
            continue;
        }
        let sigma = (row.bound * (1.0 - row.bound) / row.bound_n as f64).sqrt();
        let margin = row.emp_rate - (row.bound - BOUND_Z * sigma);
        min_margin = min_margin.min(margin);
        if margin < 0.0 {
            failures.push(json!({ "iter": row.iter, "empirical": row.emp_rate, "bound": row.bound, "n": row.bound_n }));
        }
    }
    (checked, failures, min_margin)
}

fn bound_check(name: String, metrics: &RunMetrics, warmup: usize) -> Check {
    let (checked, failures, min_margin) = bound_rows(metrics, warmup);
    Check {
        name,
        passed: checked > 0 && failures.is_empty(),
        measured: json!({
            "checkpoints": checked,
            "min_margin": if min_margin.is_finite() { Some(min_margin) } else { None },
            "failures": failures,
        }),
    }
}

/// A fresh InstanT run on the dataset so the bound is checked even before `train`.
fn own_bound_run(cfg: &ExperimentConfig, truth: &GroundTruth, ds: &SslDataset) -> Result<Check, CliError> {
    let base = cfg.effective_train();
    let arm = cfg.policies.iter().find(|a| matches!(a.policy, ThresholdPolicy::Instant { .. }));
    let tc = match arm {
        Some(a) => a.train_config(&base, cfg.seeds[0]),
        None => instant_core::engine::TrainConfig {
            policy: ThresholdPolicy::Instant { beta: 0.9, source: MatrixSource::Instance },
            seed: cfg.seeds[0],
            ..base
        },
    };
    let out = train(ds, &tc, Some(truth)).context("verification run failed")?;
    Ok(bound_check("correctness_bound".into(), &out.metrics, tc.warmup_steps))
}

/// Bound checks on InstanT runs already present under `runs/`.
fn existing_runs(root: &Path) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for dir in super::report::discover(&[root.to_path_buf()])? {
        let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
        if !matches!(manifest.train.policy, ThresholdPolicy::Instant { .. }) {
            continue;
        }
        let metrics = RunMetrics::read_csv(&dir.join(METRICS_FILE))
            .with_context(|| format!("reading {}", dir.join(METRICS_FILE).display()))?;
        if metrics.rows.iter().all(|r| r.bound.is_nan()) {
            continue;
        }
        let name = format!("correctness_bound:{}/seed-{}", manifest.policy_name, manifest.seed);
        checks.push(bound_check(name, &metrics, manifest.train.warmup_steps));
    }
    Ok(checks)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}
