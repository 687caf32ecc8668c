use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transition::TransitionMatrix;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{
    softmax, softmax_slice, Activation, Matrix, MlpGradient, MlpModel, ProbVector, SgdConfig,
    SgdState, PROB_FLOOR,
};

/// Which noisy target the estimator is fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorTarget {
    /// One-hot classifier argmax.
    #[default]
    Hard,
    /// The classifier's full softmax output.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: SgdConfig,
    /// Optimizer steps per refresh.
    pub steps: usize,
    pub batch_size: usize,
    pub target: EstimatorTarget,
    /// Initial diagonal of `T̂(x)`, set through the output bias. Rows that
    /// never see a labeled example keep roughly this prior, helped by the
    /// optimizer's weight decay.
    pub initial_diagonal: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Tanh,
            optimizer: SgdConfig {
                lr: 0.05,
                weight_decay: 0.1,
                ..SgdConfig::default()
            },
            steps: 50,
            batch_size: 64,
            target: EstimatorTarget::Hard,
            initial_diagonal: Some(0.9),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("estimator batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("estimator hidden widths must be positive".into()));
        }
        if let Some(d) = self.initial_diagonal {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("initial_diagonal {d} must be in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One labeled example with its clean label and the classifier's noisy view of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBatchRecord {
    pub features: Vec<f64>,
    pub clean_label: usize,
    pub noisy_label: usize,
    pub noisy_posterior: ProbVector,
}

impl EstimatorBatchRecord {
    /// Builds a record from a classifier snapshot evaluated at `features`.
    pub fn from_classifier(
        classifier: &MlpModel,
        features: Vec<f64>,
        clean_label: usize,
        temperature: f64,
    ) -> Result<Self> {
        let posterior = softmax(&classifier.logits(&features)?, temperature)?;
        Ok(Self {
            features,
            clean_label,
            noisy_label: posterior.argmax(),
            noisy_posterior: posterior,
        })
    }

    fn target(&self, mode: EstimatorTarget) -> Vec<f64> {
        match mode {
            EstimatorTarget::Hard => ProbVector::one_hot(self.noisy_posterior.len(), self.noisy_label).into_vec(),
            EstimatorTarget::Soft => self.noisy_posterior.as_slice().to_vec(),
        }
    }
}

/// Network mapping features to `K²` logits, read as `K` rows under a row-wise softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimator {
    network: MlpModel,
    num_classes: usize,
}

impl TransitionEstimator {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        num_classes: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes * num_classes);
        Self::from_network(MlpModel::new(&dims, activation, rng)?, num_classes)
    }

    pub fn from_config<R: Rng + ?Sized>(
        input_dim: usize,
        num_classes: usize,
        config: &EstimatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let est = Self::new(input_dim, num_classes, &config.hidden, config.activation, rng)?;
        match config.initial_diagonal {
            Some(d) => est.with_diagonal_prior(d),
            None => Ok(est),
        }
    }

    /// Sets the output bias so that a zero hidden signal gives diagonal `d`
    /// and equal off-diagonal entries. Needs `1/K ≤ d < 1`.
    pub fn with_diagonal_prior(mut self, d: f64) -> Result<Self> {
        let k = self.num_classes;
        if !(d >= 1.0 / k as f64 && d < 1.0) {
            return Err(Error::InvalidInput(format!("diagonal prior {d} outside [1/{k}, 1)")));
        }
        let logit = (d * (k as f64 - 1.0) / (1.0 - d)).ln();
        let last = self.network.layers_mut().last_mut().expect("network has an output layer");
        for i in 0..k {
            for j in 0..k {
                last.bias[i * k + j] = if i == j { logit } else { 0.0 };
            }
        }
        Ok(self)
    }

    pub fn from_network(network: MlpModel, num_classes: usize) -> Result<Self> {
        check_dim(num_classes * num_classes, network.output_dim())?;
        Ok(Self { network, num_classes })
    }

    pub fn network(&self) -> &MlpModel {
        &self.network
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// `T̂(x)`: logits reshaped to `K` rows, each passed through a softmax.
    pub fn head(&self, x: &[f64]) -> Result<TransitionMatrix> {
        let logits = self.network.logits(x)?;
        Ok(rows_softmax(&logits, self.num_classes))
    }

    /// Mean cross-entropy of the clean-label row of `T̂(x)` against the noisy target.
    pub fn loss(&self, batch: &[EstimatorBatchRecord], target: EstimatorTarget) -> Result<(f64, MlpGradient)> {
        self.loss_over(batch.iter(), batch.len(), target)
    }

    fn loss_over<'a>(
        &self,
        records: impl Iterator<Item = &'a EstimatorBatchRecord>,
        n: usize,
        mode: EstimatorTarget,
    ) -> Result<(f64, MlpGradient)> {
        if n == 0 {
            return Err(Error::InvalidInput("empty estimator batch".into()));
        }
        let k = self.num_classes;
        let scale = 1.0 / n as f64;
        let mut grad = self.network.zero_gradient();
        let mut total = 0.0;
        for rec in records {
            check_dim(k, rec.noisy_posterior.len())?;
            if rec.clean_label >= k || rec.noisy_label >= k {
                return Err(Error::InvalidInput(format!(
                    "label out of range for {k} classes"
                )));
            }
            let target = rec.target(mode);
            let (logits, cache) = self.network.forward(&rec.features)?;
            let block = rec.clean_label * k..(rec.clean_label + 1) * k;
            let row = softmax_slice(&logits[block.clone()], 1.0);
            let mut dlogits = vec![0.0; k * k];
            for j in 0..k {
                if target[j] != 0.0 {
                    total -= target[j] * row[j].max(PROB_FLOOR).ln();
                }
                dlogits[block.start + j] = row[j] - target[j];
            }
            self.network.backward_into(&cache, &dlogits, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }
}

/// Loss of the estimator on a batch; see [`TransitionEstimator::loss`].
pub fn estimator_loss(
    est: &TransitionEstimator,
    batch: &[EstimatorBatchRecord],
    target: EstimatorTarget,
) -> Result<(f64, MlpGradient)> {
    est.loss(batch, target)
}

/// Runs `config.steps` SGD steps on minibatches of `records`; returns the loss per step.
pub fn train_estimator<R: Rng + ?Sized>(
    est: &mut TransitionEstimator,
    records: &[EstimatorBatchRecord],
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.steps == 0 {
        return Ok(Vec::new());
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("no labeled records for the estimator".into()));
    }
    let mut opt = SgdState::new(config.optimizer, &est.network)?;
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, grad) = if records.len() <= config.batch_size {
            est.loss_over(records.iter(), records.len(), config.target)?
        } else {
            let picked = index::sample(rng, records.len(), config.batch_size);
            est.loss_over(picked.iter().map(|i| &records[i]), config.batch_size, config.target)?
        };
        opt.step(&mut est.network, &grad, step)?;
        losses.push(loss);
    }
    Ok(losses)
}

pub(crate) fn rows_softmax(logits: &[f64], k: usize) -> TransitionMatrix {
    let mut data = Vec::with_capacity(k * k);
    for i in 0..k {
        data.extend(softmax_slice(&logits[i * k..(i + 1) * k], 1.0));
    }
    TransitionMatrix::from_matrix_unchecked(Matrix::from_vec(k, k, data).expect("finite softmax"))
}
