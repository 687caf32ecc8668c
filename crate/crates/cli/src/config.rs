use std::collections::HashSet;
use std::path::{Path, PathBuf};

use instant_core::engine::TrainConfig;
use instant_core::synthdata::{CsvSchema, IdxOptions, MixtureSpec, NoiseField};
use instant_core::thresholds::ThresholdPolicy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One experiment: a dataset, a reference noise field, shared training
/// settings and the policies to compare across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Overrides `train.log_every` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<usize>,
    pub dataset: DatasetSection,
    /// Reference `T(x)` for oracle metrics; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseField>,
    #[serde(default)]
    pub train: TrainConfig,
    pub policies: Vec<PolicyArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    /// Symmetric Gaussian mixture, regenerated from these parameters on every command.
    Mixture {
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        separation: f64,
        #[serde(default = "default_variance")]
        variance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priors: Option<Vec<f64>>,
        labeled_per_class: usize,
        unlabeled: usize,
        test: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        /// Separate labeled test file; otherwise `schema.test_fraction` is held out.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default)]
        schema: CsvSchema,
        /// Sidecar written by `generate`, enabling oracle metrics.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<PathBuf>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        options: IdxOptions,
    },
}

/// Tagged sections report errors at the table header; point at the offending key instead.
fn locate_unknown_key(text: &str, msg: &str) -> String {
    let Some(rest) = msg.split("unknown field `").nth(1) else { return msg.to_string() };
    let Some(key) = rest.split('`').next() else { return msg.to_string() };
    let line = text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    });
    match line {
        Some(i) => format!("{msg}\nunknown key `{key}` at line {}", i + 1),
        None => msg.to_string(),
    }
}

fn default_dim() -> usize {
    2
}

fn default_variance() -> f64 {
    1.0
}

/// A named policy with optional DA/RT overrides of the shared train section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArm {
    pub name: String,
    pub policy: ThresholdPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution_alignment: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_threshold: Option<bool>,
}

impl PolicyArm {
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            policy: self.policy,
            distribution_alignment: self.distribution_alignment.unwrap_or(base.distribution_alignment),
            relative_threshold: self.relative_threshold.unwrap_or(base.relative_threshold),
            seed,
            ..base.clone()
        }
    }
}

impl DatasetSection {
    pub fn mixture_spec(&self) -> Result<Option<MixtureSpec>, CliError> {
        let Self::Mixture { classes, dim, separation, variance, priors, .. } = self else {
            return Ok(None);
        };
        let mut spec = MixtureSpec::symmetric(*classes, *dim, *separation, *variance).map_err(CliError::config)?;
        if let Some(p) = priors {
            spec = MixtureSpec::new(spec.means, *variance, p.clone()).map_err(CliError::config)?;
        }
        Ok(Some(spec))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(locate_unknown_key(text, &e.to_string())))?;
        // without an explicit schedule the cosine decay follows `train.iterations`
        let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let explicit = raw
            .get("train")
            .and_then(|t| t.get("optimizer"))
            .and_then(|o| o.get("schedule"))
            .is_some();
        if !explicit {
            cfg.train = cfg.train.clone().with_iterations(cfg.train.iterations);
        }
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative dataset paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.dataset {
            DatasetSection::Mixture { .. } => {}
            DatasetSection::Csv { path, test_path, ground_truth, .. } => {
                fix(path);
                if let Some(p) = test_path {
                    fix(p);
                }
                if let Some(p) = ground_truth {
                    fix(p);
                }
            }
            DatasetSection::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        if self.policies.is_empty() {
            return Err(CliError::Config("policies must list at least one policy".into()));
        }
        let mut names = HashSet::new();
        for arm in &self.policies {
            if arm.name.is_empty() || arm.name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("invalid policy name {:?}", arm.name)));
            }
            if !names.insert(arm.name.as_str()) {
                return Err(CliError::Config(format!("duplicate policy name {:?}", arm.name)));
            }
            arm.policy.validate().map_err(CliError::config)?;
        }
        if self.log_every == Some(0) {
            return Err(CliError::Config("log_every must be at least 1".into()));
        }
        self.effective_train().validate().map_err(CliError::config)?;
        let spec = self.dataset.mixture_spec()?;
        if let (Some(noise), Some(spec)) = (&self.noise, &spec) {
            noise.validate(spec.num_classes()).map_err(CliError::config)?;
        }
        Ok(())
    }

    /// The train section with the top-level cadence applied.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(n) = self.log_every {
            t.log_every = n;
        }
        t
    }

    pub fn noise_field(&self) -> NoiseField {
        self.noise.clone().unwrap_or_else(NoiseField::none)
    }

    /// Applies `--seed-override` and `--policy-filter`.
    pub fn apply_overrides(&mut self, seeds: Option<&[u64]>, policies: Option<&[String]>) -> Result<(), CliError> {
        if let Some(s) = seeds {
            self.seeds = s.to_vec();
        }
        if let Some(filter) = policies {
            let unknown: Vec<&String> = filter.iter().filter(|f| !self.policies.iter().any(|p| &p.name == *f)).collect();
            if !unknown.is_empty() {
                return Err(CliError::Config(format!("unknown policies in filter: {unknown:?}")));
            }
            self.policies.retain(|p| filter.contains(&p.name));
        }
        self.validate()
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join("dataset")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }
}
