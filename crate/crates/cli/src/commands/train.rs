use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use instant_core::engine::{train, GroundTruth, TrainConfig, TrainOutcome};
use instant_core::noise::TransitionMatrix;
use instant_core::synthdata::{NoiseField, SslDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSection, ExperimentConfig, PolicyArm};
use crate::data::resolve;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRANSITIONS_FILE: &str = "transitions.txt";

/// Test points whose final `T̂(x)` is written to `transitions.txt`.
const SAMPLED_INSTANCES: usize = 5;

/// Everything needed to interpret a run directory without the original config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub policy_name: String,
    pub seed: u64,
    pub library_version: String,
    pub train: TrainConfig,
    pub dataset: DatasetSection,
    pub noise: Option<NoiseField>,
}

pub fn run_dir(root: &Path, policy: &str, seed: u64) -> PathBuf {
    root.join(policy).join(format!("seed-{seed}"))
}

/// Trains every (policy, seed) pair, at most `jobs` at a time. Returns the run directories.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<PathBuf>, CliError> {
    let resolved = resolve(cfg)?;
    let base = cfg.effective_train();
    let pairs: Vec<(&PolicyArm, u64)> =
        cfg.policies.iter().flat_map(|arm| cfg.seeds.iter().map(move |&s| (arm, s))).collect();
    // surface configuration problems before any run starts
    for (arm, seed) in &pairs {
        arm.train_config(&base, *seed)
            .validate()
            .map_err(|e| CliError::Config(format!("policy {}: {e}", arm.name)))?;
    }
    for w in resolved.dataset.warnings() {
        log::warn!("{w}");
    }
    let root = cfg.runs_dir();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let results: Vec<Result<PathBuf, CliError>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(arm, seed)| {
                let tc = arm.train_config(&base, *seed);
                run_one(cfg, arm, &tc, &resolved.dataset, resolved.ground_truth.as_ref(), &root)
            })
            .collect()
    });
    let dirs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(dirs)
}

fn run_one(
    cfg: &ExperimentConfig,
    arm: &PolicyArm,
    tc: &TrainConfig,
    dataset: &SslDataset,
    truth: Option<&GroundTruth>,
    root: &Path,
) -> Result<PathBuf, CliError> {
    let id = format!("policy {} seed {}", arm.name, tc.seed);
    let dir = run_dir(root, &arm.name, tc.seed);
    std::fs::create_dir_all(&dir).with_context(|| format!("{id}: creating {}", dir.display()))?;
    let manifest = RunManifest {
        policy_name: arm.name.clone(),
        seed: tc.seed,
        library_version: instant_core::VERSION.to_string(),
        train: tc.clone(),
        dataset: cfg.dataset.clone(),
        noise: cfg.noise.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest).with_context(|| id.clone())?;

    let out = train(dataset, tc, truth).with_context(|| format!("{id}: training failed"))?;
    out.metrics.write_csv(&dir.join(METRICS_FILE)).with_context(|| format!("{id}: writing metrics"))?;
    write_json(&dir.join(SUMMARY_FILE), &out.summary).with_context(|| id.clone())?;
    if let Some(text) = transitions_text(&out, dataset)? {
        std::fs::write(dir.join(TRANSITIONS_FILE), text).with_context(|| format!("{id}: writing transitions"))?;
    }
    log::info!("{id}: final test accuracy {:.4}", out.summary.final_test_acc);
    Ok(dir)
}

/// Final `T̂(x)` at the first few test points, or the shared matrix for the class-reduced source.
fn transitions_text(out: &TrainOutcome, dataset: &SslDataset) -> Result<Option<String>, CliError> {
    let mut text = String::new();
    if let Some(shared) = &out.shared_transition {
        text.push_str("# class-reduced\n");
        text.push_str(&shared.to_text());
        return Ok(Some(text));
    }
    let Some(est) = &out.estimator else { return Ok(None) };
    for (i, ex) in dataset.test().iter().take(SAMPLED_INSTANCES).enumerate() {
        let t: TransitionMatrix = est.head(&ex.features)?;
        let coords: Vec<String> = ex.features.iter().map(|v| v.to_string()).collect();
        writeln!(text, "# instance {i}: x = {}", coords.join(", ")).expect("string write");
        text.push_str(&t.to_text());
        text.push('\n');
    }
    Ok(Some(text))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
