use anyhow::Context;
use instant_core::synthdata::write_csv;

use crate::config::{DatasetSection, ExperimentConfig};
use crate::data::{resolve, GroundTruthSidecar, SIDECAR_FILE, TEST_FILE, TRAIN_FILE};
use crate::error::CliError;

/// Sentinel label of unlabeled rows in generated CSV files.
pub const SENTINEL: i64 = -1;

/// Writes `train.csv` (unlabeled rows carry the sentinel), `test.csv` and the sidecar.
pub fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if !matches!(cfg.dataset, DatasetSection::Mixture { .. }) {
        return Err(CliError::Config("generate needs a `mixture` dataset section".into()));
    }
    let resolved = resolve(cfg)?;
    let ds = &resolved.dataset;
    let dir = cfg.dataset_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(dir.join(TRAIN_FILE), ds.labeled(), ds.unlabeled_features(), SENTINEL)?;
    write_csv(dir.join(TEST_FILE), ds.test(), &[], SENTINEL)?;
    let sidecar = GroundTruthSidecar {
        library_version: instant_core::VERSION.to_string(),
        ground_truth: resolved.ground_truth.expect("mixture has ground truth"),
        dataset: cfg.dataset.clone(),
    };
    sidecar.write(&dir.join(SIDECAR_FILE))?;
    for w in ds.warnings() {
        log::warn!("{w}");
    }
    log::info!(
        "wrote {} labeled, {} unlabeled and {} test rows to {}",
        ds.labeled().len(),
        ds.unlabeled_features().len(),
        ds.test().len(),
        dir.display()
    );
    Ok(())
}
