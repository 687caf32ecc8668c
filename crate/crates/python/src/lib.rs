//! Python bindings: synthetic data, transition matrices, thresholds and training.

use instant_core::engine::{self, GroundTruth, MetricsRow, TrainConfig, TrainOutcome};
use instant_core::noise::{self, TransitionMatrix};
use instant_core::numerics::{softmax, ProbVector};
use instant_core::synthdata::{self, MixtureSpec, NoiseField, NoiseKind, SslDataset};
use instant_core::thresholds::{self, MatrixSource, ThresholdPolicy};
use instant_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::DegenerateFit(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn prob(p: Vec<f64>) -> PyResult<ProbVector> {
    ProbVector::new(p).map_err(py_err)
}

#[pyclass(name = "Mixture", module = "instant_ssl", frozen)]
struct PyMixture(MixtureSpec);

#[pymethods]
impl PyMixture {
    /// Symmetric isotropic Gaussian mixture with means on a circle of radius `separation`.
    #[new]
    #[pyo3(signature = (classes, separation, dim = 2, variance = 1.0, priors = None))]
    fn new(classes: usize, separation: f64, dim: usize, variance: f64, priors: Option<Vec<f64>>) -> PyResult<Self> {
        let mut spec = MixtureSpec::symmetric(classes, dim, separation, variance).map_err(py_err)?;
        if let Some(p) = priors {
            spec = MixtureSpec::new(spec.means, variance, p).map_err(py_err)?;
        }
        Ok(Self(spec))
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.0.means.clone()
    }

    #[getter]
    fn priors(&self) -> Vec<f64> {
        self.0.priors.clone()
    }

    fn clean_posterior(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.clean_posterior(&x).map_err(py_err)?.into_vec())
    }

    fn bayes_label(&self, x: Vec<f64>) -> PyResult<usize> {
        self.0.bayes_label(&x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Mixture(classes={}, dim={}, variance={})", self.0.num_classes(), self.0.dim(), self.0.variance)
    }
}

#[pyclass(name = "NoiseField", module = "instant_ssl", frozen)]
struct PyNoiseField(NoiseField);

#[pymethods]
impl PyNoiseField {
    #[staticmethod]
    fn none() -> Self {
        Self(NoiseField::none())
    }

    #[staticmethod]
    fn uniform_flip(strength: f64) -> Self {
        Self(NoiseField { kind: NoiseKind::UniformFlip, strength })
    }

    #[staticmethod]
    #[pyo3(signature = (strength, sharpness = 4.0))]
    fn margin_based(strength: f64, sharpness: f64) -> Self {
        Self(NoiseField { kind: NoiseKind::MarginBased { sharpness }, strength })
    }

    #[staticmethod]
    fn confusion_pair(strength: f64, pairs: Vec<usize>) -> Self {
        Self(NoiseField { kind: NoiseKind::ConfusionPair { pairs }, strength })
    }

    fn transition_at(&self, mixture: &PyMixture, x: Vec<f64>) -> PyResult<PyTransition> {
        self.0.validate(mixture.0.num_classes()).map_err(py_err)?;
        Ok(PyTransition(self.0.transition_at(&mixture.0, &x).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("NoiseField({:?}, strength={})", self.0.kind, self.0.strength)
    }
}

/// Row-stochastic `T` with `T[i][j] = P(noisy = j | clean = i)`.
#[pyclass(name = "TransitionMatrix", module = "instant_ssl", frozen)]
struct PyTransition(TransitionMatrix);

#[pymethods]
impl PyTransition {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self(TransitionMatrix::from_rows(&rows).map_err(py_err)?))
    }

    #[staticmethod]
    fn identity(k: usize) -> Self {
        Self(TransitionMatrix::identity(k))
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.0.num_classes()).map(|i| self.0.row(i).to_vec()).collect()
    }

    /// `Tᵀ p` for a clean posterior `p`.
    fn noisy_posterior(&self, clean: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.noisy_posterior(&prob(clean)?).map_err(py_err)?.into_vec())
    }

    fn is_informative(&self) -> bool {
        noise::informative_check(&self.0).informative
    }

    fn mean_row_l1(&self, other: &PyTransition) -> PyResult<f64> {
        noise::mean_row_l1(&self.0, &other.0).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("TransitionMatrix({:?})", self.rows())
    }
}

#[pyclass(name = "Dataset", module = "instant_ssl", frozen)]
struct PyDataset(SslDataset);

#[pymethods]
impl PyDataset {
    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// `(features, labels)` of the labeled set.
    fn labeled(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.0.labeled().iter().map(|e| (e.features.clone(), e.label)).unzip()
    }

    fn unlabeled(&self) -> Vec<Vec<f64>> {
        self.0.unlabeled_features().to_vec()
    }

    fn test(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.0.test().iter().map(|e| (e.features.clone(), e.label)).unzip()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.labeled().len() + self.0.unlabeled_features().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(labeled={}, unlabeled={}, test={}, classes={})",
            self.0.labeled().len(),
            self.0.unlabeled_features().len(),
            self.0.test().len(),
            self.0.num_classes()
        )
    }
}

/// Samples a dataset: `labeled_per_class` labels per class plus unlabeled and test points.
#[pyfunction]
fn generate(mixture: &PyMixture, labeled_per_class: usize, unlabeled: usize, test: usize, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset(synthdata::generate(&mixture.0, labeled_per_class, unlabeled, test, seed).map_err(py_err)?))
}

#[pyclass(name = "TrainConfig", module = "instant_ssl")]
struct PyTrainConfig(TrainConfig);

fn parse_policy(policy: &str, value: f64, class_reduced: bool) -> PyResult<ThresholdPolicy> {
    let p = match policy {
        "fixed" => ThresholdPolicy::Fixed { tau: value },
        "relative" => ThresholdPolicy::Relative { beta: value },
        "instant" => ThresholdPolicy::Instant {
            beta: value,
            source: if class_reduced { MatrixSource::ClassReduced } else { MatrixSource::Instance },
        },
        other => return Err(PyValueError::new_err(format!("unknown policy {other:?}; expected fixed, relative or instant"))),
    };
    p.validate().map_err(py_err)?;
    Ok(p)
}

#[pymethods]
impl PyTrainConfig {
    /// `threshold` is `tau` for the fixed policy and `beta` otherwise.
    #[new]
    #[pyo3(signature = (
        policy = "instant",
        threshold = 0.9,
        iterations = 1500,
        seed = 0,
        distribution_alignment = true,
        relative_threshold = true,
        class_reduced = false,
    ))]
    fn new(
        policy: &str,
        threshold: f64,
        iterations: usize,
        seed: u64,
        distribution_alignment: bool,
        relative_threshold: bool,
        class_reduced: bool,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            policy: parse_policy(policy, threshold, class_reduced)?,
            seed,
            distribution_alignment,
            relative_threshold,
            ..TrainConfig::default()
        }
        .with_iterations(iterations);
        cfg.validate().map_err(py_err)?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        cfg.validate().map_err(py_err)?;
        Ok(Self(cfg))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[setter]
    fn set_iterations(&mut self, n: usize) {
        self.0 = self.0.clone().with_iterations(n);
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn lambda_u(&self) -> f64 {
        self.0.lambda
    }

    #[setter]
    fn set_lambda_u(&mut self, v: f64) {
        self.0.lambda = v;
    }

    #[getter]
    fn log_every(&self) -> usize {
        self.0.log_every
    }

    #[setter]
    fn set_log_every(&mut self, v: usize) {
        self.0.log_every = v;
    }

    #[getter]
    fn hidden(&self) -> Vec<usize> {
        self.0.hidden.clone()
    }

    #[setter]
    fn set_hidden(&mut self, v: Vec<usize>) {
        self.0.hidden = v;
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.0.policy.kind_name()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(policy={:?}, iterations={}, seed={})", self.0.policy, self.0.iterations, self.0.seed)
    }
}

#[pyclass(name = "TrainResult", module = "instant_ssl", frozen)]
struct PyTrainResult(TrainOutcome);

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iter", r.iter)?;
    d.set_item("test_acc", r.test_acc)?;
    d.set_item("pl_acc", r.pl_acc)?;
    d.set_item("util", r.util)?;
    d.set_item("mean_tau", r.mean_tau)?;
    d.set_item("kappa", r.kappa)?;
    d.set_item("bound", r.bound)?;
    d.set_item("emp_rate", r.emp_rate)?;
    d.set_item("bound_n", r.bound_n)?;
    d.set_item("loss", r.loss)?;
    d.set_item("sup_loss", r.sup_loss)?;
    d.set_item("unsup_loss", r.unsup_loss)?;
    Ok(d)
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn final_test_acc(&self) -> f64 {
        self.0.summary.final_test_acc
    }

    #[getter]
    fn final_kappa(&self) -> Option<f64> {
        self.0.summary.final_kappa
    }

    /// One dict per logged step; oracle columns are NaN without ground truth.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0.metrics.rows.iter().map(|r| row_dict(py, r)).collect()
    }

    fn metrics_csv(&self) -> String {
        self.0.metrics.to_csv_string()
    }

    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let logits = self.0.model.logits(&x).map_err(py_err)?;
        Ok(softmax(&logits, 1.0).map_err(py_err)?.into_vec())
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        Ok(prob(self.predict_proba(x)?)?.argmax())
    }

    /// Estimated `T̂(x)`, or the shared matrix for the class-reduced source; `None` without an estimator.
    fn transition(&self, x: Vec<f64>) -> PyResult<Option<PyTransition>> {
        if let Some(t) = &self.0.shared_transition {
            return Ok(Some(PyTransition(t.clone())));
        }
        match &self.0.estimator {
            Some(est) => Ok(Some(PyTransition(est.head(&x).map_err(py_err)?))),
            None => Ok(None),
        }
    }

    fn __repr__(&self) -> String {
        format!("TrainResult(final_test_acc={:.4}, logged={})", self.0.summary.final_test_acc, self.0.metrics.rows.len())
    }
}

/// Trains one model. With `mixture` (and optionally `noise`) the oracle columns are filled in.
#[pyfunction]
#[pyo3(signature = (dataset, config, mixture = None, noise = None))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    config: &PyTrainConfig,
    mixture: Option<&PyMixture>,
    noise: Option<&PyNoiseField>,
) -> PyResult<PyTrainResult> {
    let truth = match mixture {
        Some(m) => Some(
            GroundTruth::new(m.0.clone(), noise.map_or_else(NoiseField::none, |n| n.0.clone())).map_err(py_err)?,
        ),
        None if noise.is_some() => return Err(PyValueError::new_err("noise needs the mixture it is defined on")),
        None => None,
    };
    let (ds, cfg) = (&dataset.0, &config.0);
    let out = py.detach(|| engine::train(ds, cfg, truth.as_ref())).map_err(py_err)?;
    Ok(PyTrainResult(out))
}

/// `min(1, T_kk·p_s + Σ_{i≠k} T_ik·p_i + κ)` where `s` is the runner-up class to `k`.
#[pyfunction]
fn instant_threshold(t: &PyTransition, clean: Vec<f64>, k: usize, kappa: f64) -> PyResult<f64> {
    thresholds::instant_threshold(&t.0, &prob(clean)?, k, kappa).map_err(py_err)
}

/// `β` times the mean labeled top-1 confidence.
#[pyfunction]
fn relative_threshold(confidences: Vec<f64>, beta: f64) -> PyResult<f64> {
    thresholds::relative_threshold(&confidences, beta).map_err(py_err)
}

/// `max(0, 1 − C·(ε/T_kk)^α)`.
#[pyfunction]
fn correctness_bound(epsilon: f64, c: f64, alpha: f64, t_kk: f64) -> PyResult<f64> {
    thresholds::correctness_bound(epsilon, c, alpha, t_kk).map_err(py_err)
}

/// Fits `P[margin ≤ δ] ≤ C·δ^α` on `n` grid points up to `delta0`; returns `(C, alpha)`.
#[pyfunction]
#[pyo3(signature = (margins, delta0 = 1.0, n = 20))]
fn fit_margin_condition(margins: Vec<f64>, delta0: f64, n: usize) -> PyResult<(f64, f64)> {
    let fit = thresholds::fit_tsybakov(&margins, &thresholds::linear_grid(delta0, n)).map_err(py_err)?;
    Ok((fit.c, fit.alpha))
}

#[pymodule]
fn instant_ssl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", instant_core::VERSION)?;
    m.add_class::<PyMixture>()?;
    m.add_class::<PyNoiseField>()?;
    m.add_class::<PyTransition>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(instant_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(relative_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(correctness_bound, m)?)?;
    m.add_function(wrap_pyfunction!(fit_margin_condition, m)?)?;
    Ok(())
}
