use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::EstimatorConfig;
use crate::numerics::{Activation, LrSchedule, SgdConfig};
use crate::thresholds::{MatrixSource, ThresholdPolicy};

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Weight of the unsupervised loss.
    pub lambda: f64,
    pub policy: ThresholdPolicy,
    pub distribution_alignment: bool,
    /// When false, `κ` is held at `β` instead of tracking labeled confidence.
    pub relative_threshold: bool,
    /// Softmax temperature for predictions that feed pseudo-labels.
    pub temperature: f64,
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_drop: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: SgdConfig,
    pub estimator: EstimatorConfig,
    /// Steps between transition estimator refreshes.
    pub refresh_period: usize,
    pub da_momentum: f64,
    /// Clean class prior for alignment; uniform when absent.
    pub target_prior: Option<Vec<f64>>,
    pub log_every: usize,
    /// Steps before metrics count as post warm-up.
    pub warmup_steps: usize,
    /// Test points used for oracle metrics.
    pub eval_points: usize,
    /// Largest margin on the Tsybakov fit grid.
    pub bound_delta0: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let iterations = 1500;
        Self {
            iterations,
            labeled_batch: 16,
            unlabeled_batch: 112,
            lambda: 1.0,
            policy: ThresholdPolicy::Instant { beta: 0.9, source: MatrixSource::Instance },
            distribution_alignment: true,
            relative_threshold: true,
            temperature: 0.5,
            weak_sigma: 0.1,
            strong_sigma: 0.4,
            strong_drop: 0.1,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            optimizer: SgdConfig {
                lr: 0.03,
                momentum: 0.9,
                schedule: LrSchedule::Cosine { total_steps: iterations },
                weight_decay: 0.0,
            },
            estimator: EstimatorConfig::default(),
            refresh_period: 50,
            da_momentum: 0.999,
            target_prior: None,
            log_every: 100,
            warmup_steps: 200,
            eval_points: 1000,
            bound_delta0: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Sets `iterations` and stretches a cosine schedule to match.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        if let LrSchedule::Cosine { .. } = self.optimizer.schedule {
            self.optimizer.schedule = LrSchedule::Cosine { total_steps: iterations.max(1) };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("labeled_batch", self.labeled_batch),
            ("unlabeled_batch", self.unlabeled_batch),
            ("refresh_period", self.refresh_period),
            ("log_every", self.log_every),
            ("eval_points", self.eval_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda = {} must be non-negative", self.lambda)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature = {} must be positive", self.temperature)));
        }
        if !(self.weak_sigma >= 0.0 && self.strong_sigma >= self.weak_sigma && self.strong_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "perturbation scales need strong_sigma >= weak_sigma >= 0 (got {} and {})",
                self.strong_sigma, self.weak_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.strong_drop) {
            return Err(Error::Config(format!("strong_drop = {} must be in [0, 1]", self.strong_drop)));
        }
        if !(0.0..1.0).contains(&self.da_momentum) {
            return Err(Error::Config(format!("da_momentum = {} must be in [0, 1)", self.da_momentum)));
        }
        if !(self.bound_delta0 > 0.0 && self.bound_delta0 <= 1.0) {
            return Err(Error::Config(format!("bound_delta0 = {} must be in (0, 1]", self.bound_delta0)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        self.policy.validate()?;
        self.optimizer.validate()?;
        self.estimator.validate()?;
        Ok(())
    }
}
