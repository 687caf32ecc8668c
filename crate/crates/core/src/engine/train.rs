use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::align::DaState;
use super::augment::{strong_augment, weak_augment};
use super::config::TrainConfig;
use super::losses::{pseudo_label_batch, supervised_loss, unsupervised_loss, TransitionSource};
use super::metrics::{MetricsRow, RunMetrics, RunSummary};
use super::oracle::GroundTruth;
use crate::error::{check_dim, Error, Result};
use crate::noise::{
    class_dependent_reduce, mean_row_l1, train_estimator, EstimatorBatchRecord, TransitionEstimator,
    TransitionMatrix,
};
use crate::numerics::{softmax, MlpModel, ProbVector, SgdState};
use crate::synthdata::{LabeledExample, SslDataset};
use crate::thresholds::{
    fit_tsybakov, linear_grid, measure_epsilon, relative_threshold, BoundReport, MatrixSource, ThresholdPolicy,
};

const GRID_POINTS: usize = 20;

// Independent random streams so that, e.g., switching off the unsupervised
// branch leaves the labeled trajectory untouched.
const STREAM_INIT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;
const STREAM_ESTIMATOR: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub estimator: Option<TransitionEstimator>,
    /// Labeled-set mean of `T̂(x)` when the class-reduced source is configured.
    pub shared_transition: Option<TransitionMatrix>,
    pub metrics: RunMetrics,
    pub summary: RunSummary,
}

/// Top-1 accuracy of `model` on `test`.
pub fn evaluate(model: &MlpModel, test: &[LabeledExample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test split".into()));
    }
    let mut correct = 0usize;
    for ex in test {
        if crate::numerics::argmax(&model.logits(&ex.features)?) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Full semi-supervised run: `L = L_s + λ·L_u` per step, with periodic
/// estimator refreshes and metric logging. `oracle` enables the columns that
/// need analytic ground truth.
pub fn train(dataset: &SslDataset, config: &TrainConfig, oracle: Option<&GroundTruth>) -> Result<TrainOutcome> {
    Run::new(dataset, config, oracle, true)?.execute()
}

/// The same loop with the unsupervised branch removed.
pub fn train_supervised(dataset: &SslDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    Run::new(dataset, config, None, false)?.execute()
}

#[derive(Default)]
struct Window {
    seen: usize,
    accepted: usize,
    with_latent: usize,
    correct: usize,
    tau_sum: f64,
}

struct Run<'a> {
    dataset: &'a SslDataset,
    config: &'a TrainConfig,
    oracle: Option<&'a GroundTruth>,
    unsupervised: bool,
    model: MlpModel,
    opt: SgdState,
    estimator: Option<TransitionEstimator>,
    shared: Option<TransitionMatrix>,
    da: Option<DaState>,
    kappa: f64,
    labeled_rng: ChaCha8Rng,
    unlabeled_rng: ChaCha8Rng,
    estimator_rng: ChaCha8Rng,
    last_bound: Option<BoundReport>,
}

impl<'a> Run<'a> {
    fn new(
        dataset: &'a SslDataset,
        config: &'a TrainConfig,
        oracle: Option<&'a GroundTruth>,
        unsupervised: bool,
    ) -> Result<Self> {
        config.validate()?;
        let k = dataset.num_classes();
        if let Some(missing) = dataset.labeled_per_class().iter().position(|&c| c == 0) {
            return Err(Error::InvalidDataset(format!("class {missing} has no labeled example")));
        }
        if unsupervised && dataset.unlabeled_features().is_empty() {
            return Err(Error::InvalidDataset("no unlabeled examples".into()));
        }
        if let Some(gt) = oracle {
            check_dim(k, gt.num_classes())?;
            check_dim(dataset.dim(), gt.mixture.dim())?;
        }
        let target = match &config.target_prior {
            Some(p) => {
                check_dim(k, p.len())?;
                ProbVector::new(p.clone())?
            }
            None => ProbVector::uniform(k),
        };

        let mut init_rng = stream(config.seed, STREAM_INIT);
        let mut dims = vec![dataset.dim()];
        dims.extend_from_slice(&config.hidden);
        dims.push(k);
        let model = MlpModel::new(&dims, config.activation, &mut init_rng)?;
        let opt = SgdState::new(config.optimizer, &model)?;

        let mut estimator_rng = stream(config.seed, STREAM_ESTIMATOR);
        let estimator = if unsupervised && config.policy.needs_estimator() {
            Some(TransitionEstimator::from_config(dataset.dim(), k, &config.estimator, &mut estimator_rng)?)
        } else {
            None
        };
        let da = if unsupervised && config.distribution_alignment {
            Some(DaState::new(target, config.da_momentum)?)
        } else {
            None
        };

        Ok(Self {
            dataset,
            config,
            oracle,
            unsupervised,
            model,
            opt,
            estimator,
            shared: None,
            da,
            kappa: f64::NAN,
            labeled_rng: stream(config.seed, STREAM_LABELED),
            unlabeled_rng: stream(config.seed, STREAM_UNLABELED),
            estimator_rng,
            last_bound: None,
        })
    }

    fn execute(mut self) -> Result<TrainOutcome> {
        let cfg = self.config;
        let labeled = self.dataset.labeled();
        let unlabeled = self.dataset.unlabeled_features();
        let latent = self.dataset.latent_labels();
        let mut metrics = RunMetrics::default();
        let mut window = Window::default();

        for step in 0..cfg.iterations {
            if self.estimator.is_some() && step % cfg.refresh_period == 0 {
                self.refresh_estimator()?;
            }
            if step % cfg.log_every == 0 {
                self.kappa = self.current_kappa()?;
            }

            let batch: Vec<LabeledExample> = (0..cfg.labeled_batch)
                .map(|_| {
                    let ex = &labeled[self.labeled_rng.random_range(0..labeled.len())];
                    LabeledExample {
                        features: weak_augment(&ex.features, cfg.weak_sigma, &mut self.labeled_rng),
                        label: ex.label,
                    }
                })
                .collect();
            let (sup_loss, mut grad) = supervised_loss(&self.model, &batch)?;

            let mut unsup_loss = 0.0;
            if self.unsupervised {
                let mut idx = Vec::with_capacity(cfg.unlabeled_batch);
                let mut weak = Vec::with_capacity(cfg.unlabeled_batch);
                let mut strong = Vec::with_capacity(cfg.unlabeled_batch);
                for _ in 0..cfg.unlabeled_batch {
                    let i = self.unlabeled_rng.random_range(0..unlabeled.len());
                    idx.push(i);
                    weak.push(weak_augment(&unlabeled[i], cfg.weak_sigma, &mut self.unlabeled_rng));
                    strong.push(strong_augment(&unlabeled[i], cfg.strong_sigma, cfg.strong_drop, &mut self.unlabeled_rng));
                }
                let source = source_of(self.estimator.as_ref(), self.shared.as_ref(), &cfg.policy);
                let out = unsupervised_loss(&self.model, source, &weak, &strong, self.kappa, self.da.as_mut(), cfg)?;
                unsup_loss = out.loss;
                grad.add_scaled(&out.gradient, cfg.lambda)?;

                // latent labels only reach these counters
                window.seen += out.labels.len();
                for (pl, &i) in out.labels.iter().zip(&idx) {
                    window.tau_sum += pl.tau;
                    if pl.accepted {
                        window.accepted += 1;
                        if let Some(y) = latent.get(i) {
                            window.with_latent += 1;
                            window.correct += usize::from(y == pl.label);
                        }
                    }
                }
            }
            let loss = sup_loss + cfg.lambda * unsup_loss;
            self.opt.step(&mut self.model, &grad, step)?;

            let done = step + 1;
            if done % cfg.log_every == 0 || done == cfg.iterations {
                let row = self.log_row(done, &window, loss, sup_loss, unsup_loss)?;
                log::debug!("iter {done}: test_acc {:.4} util {:.3} kappa {:.3}", row.test_acc, row.util, row.kappa);
                metrics.rows.push(row);
                window = Window::default();
            }
        }

        let final_test_acc = evaluate(&self.model, self.dataset.test())?;
        let summary = RunSummary {
            policy: if self.unsupervised { cfg.policy.kind_name().to_string() } else { "supervised".to_string() },
            seed: cfg.seed,
            iterations: cfg.iterations,
            warmup_steps: cfg.warmup_steps,
            final_test_acc,
            final_kappa: self.kappa.is_finite().then_some(self.kappa),
            final_bound: self.last_bound.take(),
            library_version: crate::VERSION.to_string(),
            warnings: self.dataset.warnings().to_vec(),
        };
        Ok(TrainOutcome {
            model: self.model,
            estimator: self.estimator,
            shared_transition: self.shared,
            metrics,
            summary,
        })
    }

    /// Refits `T̂` against the classifier's current predictions on weakly perturbed labeled points.
    fn refresh_estimator(&mut self) -> Result<()> {
        let cfg = self.config;
        let Some(est) = self.estimator.as_mut() else { return Ok(()) };
        let mut records = Vec::with_capacity(self.dataset.labeled().len());
        for ex in self.dataset.labeled() {
            let x = weak_augment(&ex.features, cfg.weak_sigma, &mut self.estimator_rng);
            records.push(EstimatorBatchRecord::from_classifier(&self.model, x, ex.label, cfg.temperature)?);
        }
        train_estimator(est, &records, &cfg.estimator, &mut self.estimator_rng)?;
        if let ThresholdPolicy::Instant { source: MatrixSource::ClassReduced, .. } = cfg.policy {
            self.shared = Some(class_conditional_mean(est, self.dataset.labeled())?);
        }
        Ok(())
    }

    fn current_kappa(&self) -> Result<f64> {
        let cfg = self.config;
        let Some(beta) = cfg.policy.beta() else { return Ok(f64::NAN) };
        if !cfg.relative_threshold {
            return Ok(beta);
        }
        let conf = self
            .dataset
            .labeled()
            .iter()
            .map(|ex| Ok(softmax(&self.model.logits(&ex.features)?, cfg.temperature)?.as_slice().iter().cloned().fold(0.0, f64::max)))
            .collect::<Result<Vec<f64>>>()?;
        relative_threshold(&conf, beta)
    }

    fn log_row(&mut self, iter: usize, w: &Window, loss: f64, sup_loss: f64, unsup_loss: f64) -> Result<MetricsRow> {
        let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let mut row = MetricsRow {
            iter,
            test_acc: evaluate(&self.model, self.dataset.test())?,
            pl_acc: ratio(w.correct, w.with_latent),
            util: ratio(w.accepted, w.seen),
            mean_tau: if w.seen == 0 { f64::NAN } else { w.tau_sum / w.seen as f64 },
            kappa: self.kappa,
            est_l1: f64::NAN,
            bound: f64::NAN,
            emp_rate: f64::NAN,
            bound_n: 0,
            loss,
            sup_loss,
            unsup_loss,
        };
        if let (Some(gt), true) = (self.oracle, self.unsupervised) {
            let (est_l1, report) = self.oracle_metrics(gt)?;
            row.est_l1 = est_l1;
            if let Some(report) = report {
                row.bound = report.aggregate_bound;
                row.emp_rate = report.empirical_rate;
                row.bound_n = report.n_accepted;
                self.last_bound = Some(report);
            }
        }
        Ok(row)
    }

    /// Estimator error against the true `T(x)` and the correctness bound on the evaluation points.
    fn oracle_metrics(&self, gt: &GroundTruth) -> Result<(f64, Option<BoundReport>)> {
        let cfg = self.config;
        let test = self.dataset.test();
        let eval: Vec<Vec<f64>> = test.iter().take(cfg.eval_points).map(|e| e.features.clone()).collect();
        if eval.is_empty() {
            return Ok((f64::NAN, None));
        }
        let source = source_of(self.estimator.as_ref(), self.shared.as_ref(), &cfg.policy);
        let (labels, _) = pseudo_label_batch(&self.model, source, &eval, self.kappa, self.da.as_ref(), cfg)?;

        let mut l1_sum = 0.0;
        let mut estimated = Vec::with_capacity(eval.len());
        let mut truth = Vec::with_capacity(eval.len());
        let mut margins = Vec::with_capacity(eval.len());
        let mut accepted = Vec::new();
        for (x, pl) in eval.iter().zip(&labels) {
            let t_true = gt.transition(x)?;
            let clean_true = gt.clean_posterior(x)?;
            let p = softmax(&self.model.logits(x)?, 1.0)?;
            let noisy_hat = match &pl.transition {
                Some(t) => {
                    l1_sum += mean_row_l1(t, &t_true)?;
                    t.noisy_posterior(&p)?
                }
                None => p,
            };
            estimated.push(noisy_hat);
            truth.push(t_true.noisy_posterior(&clean_true)?);
            margins.push(clean_true.margin().clamp(0.0, 1.0));
            if pl.accepted {
                let min_diag = (0..t_true.num_classes()).map(|i| t_true.get(i, i)).fold(1.0, f64::min);
                accepted.push((t_true.get(pl.label, pl.label), min_diag, pl.label == clean_true.argmax()));
            }
        }
        let est_l1 = if self.estimator.is_some() { l1_sum / eval.len() as f64 } else { f64::NAN };
        let epsilon = measure_epsilon(&estimated, &truth)?;
        let fit = match fit_tsybakov(&margins, &linear_grid(cfg.bound_delta0, GRID_POINTS)) {
            Ok(fit) => fit,
            Err(Error::DegenerateFit(msg)) => {
                log::warn!("skipping bound: {msg}");
                return Ok((est_l1, None));
            }
            Err(e) => return Err(e),
        };
        // a zero diagonal entry makes the bound undefined for that instance
        if accepted.iter().any(|a| a.0 <= 0.0) {
            return Ok((est_l1, None));
        }
        Ok((est_l1, Some(BoundReport::build(epsilon, &fit, &accepted, false)?)))
    }
}

/// Row `i` is the mean of row `i` of `T̂(x)` over labeled points of class `i`,
/// the only rows the estimator objective constrains.
fn class_conditional_mean(est: &TransitionEstimator, labeled: &[LabeledExample]) -> Result<TransitionMatrix> {
    let k = est.num_classes();
    let mut per_class = vec![Vec::new(); k];
    for ex in labeled {
        per_class[ex.label].push(est.head(&ex.features)?);
    }
    let mut rows = Vec::with_capacity(k);
    for (i, heads) in per_class.iter().enumerate() {
        if heads.is_empty() {
            return Err(Error::InvalidDataset(format!("class {i} has no labeled example")));
        }
        let mean = class_dependent_reduce(heads)?;
        rows.push(mean.row(i).to_vec());
    }
    TransitionMatrix::from_rows(&rows)
}

fn source_of<'a>(
    estimator: Option<&'a TransitionEstimator>,
    shared: Option<&'a TransitionMatrix>,
    policy: &ThresholdPolicy,
) -> TransitionSource<'a> {
    match (policy, estimator, shared) {
        (ThresholdPolicy::Instant { source: MatrixSource::ClassReduced, .. }, _, Some(t)) => TransitionSource::Shared(t),
        (ThresholdPolicy::Instant { source: MatrixSource::Instance, .. }, Some(est), _) => TransitionSource::Instance(est),
        _ => TransitionSource::Absent,
    }
}
