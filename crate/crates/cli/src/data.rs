use std::path::{Path, PathBuf};

use anyhow::Context;
use instant_core::engine::GroundTruth;
use instant_core::synthdata::{generate, load_csv, load_idx, load_labeled_csv, CsvSchema, SslDataset};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSection, ExperimentConfig};
use crate::error::CliError;

pub const SIDECAR_FILE: &str = "ground_truth.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    pub library_version: String,
    pub ground_truth: GroundTruth,
    pub dataset: DatasetSection,
}

impl GroundTruthSidecar {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!(
                "cannot read ground-truth sidecar {}: {e}. Oracle checks need the analytic posterior and T(x) \
                 of a synthetic dataset; run `instant generate` first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .with_context(|| format!("malformed sidecar {}", path.display()))
            .map_err(CliError::Runtime)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).context("serializing sidecar")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub struct Resolved {
    pub dataset: SslDataset,
    pub ground_truth: Option<GroundTruth>,
}

/// Builds the dataset described by the config, plus ground truth when it is known.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, CliError> {
    match &cfg.dataset {
        DatasetSection::Mixture { labeled_per_class, unlabeled, test, seed, .. } => {
            let spec = cfg.dataset.mixture_spec()?.expect("mixture section");
            let dataset = generate(&spec, *labeled_per_class, *unlabeled, *test, *seed).map_err(CliError::config)?;
            let ground_truth = GroundTruth::new(spec, cfg.noise_field()).map_err(CliError::config)?;
            Ok(Resolved { dataset, ground_truth: Some(ground_truth) })
        }
        DatasetSection::Csv { path, test_path, schema, ground_truth } => {
            let mut dataset = load_csv(path, schema).with_context(|| format!("loading {}", path.display()))?;
            if let Some(tp) = test_path {
                let plain = CsvSchema { test_fraction: 0.0, ..schema.clone() };
                let test = load_labeled_csv(tp, &plain).with_context(|| format!("loading {}", tp.display()))?;
                dataset = dataset.with_test(test)?;
            }
            let ground_truth = match ground_truth {
                Some(p) => Some(GroundTruthSidecar::read(p)?.ground_truth),
                None => None,
            };
            Ok(Resolved { dataset, ground_truth })
        }
        DatasetSection::Idx { images, labels, options } => {
            let dataset = load_idx(images, labels, options).with_context(|| format!("loading {}", images.display()))?;
            Ok(Resolved { dataset, ground_truth: None })
        }
    }
}

/// Where verification reads ground truth from.
pub fn sidecar_path(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    match &cfg.dataset {
        DatasetSection::Mixture { .. } => Ok(cfg.dataset_dir().join(SIDECAR_FILE)),
        DatasetSection::Csv { ground_truth: Some(p), .. } => Ok(p.clone()),
        DatasetSection::Csv { .. } | DatasetSection::Idx { .. } => Err(CliError::Config(
            "verification needs a ground-truth sidecar: oracle checks compare against the analytic posterior and \
             T(x), which only synthetic datasets have. Set dataset.ground_truth to a sidecar from `instant generate`"
                .into(),
        )),
    }
}
