use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::MixtureSpec;
use crate::error::{check_dim, Error, Result};

/// Fewer labeled examples per class than this cannot identify `T(x)`.
pub(crate) const IDENTIFIABILITY_MIN_PER_CLASS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Latent labels of the unlabeled pool. Only evaluation code reads these;
/// no training entry point accepts them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentLabels(Vec<Option<usize>>);

impl LatentLabels {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        Self(labels)
    }

    pub fn get(&self, index: usize) -> Option<usize> {
        self.0.get(index).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Mixture { spec: MixtureSpec, seed: u64 },
    External { tag: String },
}

/// Labeled, unlabeled and test splits. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SslDataset {
    num_classes: usize,
    labeled: Vec<LabeledExample>,
    unlabeled: Vec<Vec<f64>>,
    latent: LatentLabels,
    test: Vec<LabeledExample>,
    provenance: Provenance,
    warnings: Vec<String>,
}

impl SslDataset {
    pub fn new(
        num_classes: usize,
        labeled: Vec<LabeledExample>,
        unlabeled: Vec<Vec<f64>>,
        latent: LatentLabels,
        test: Vec<LabeledExample>,
        provenance: Provenance,
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::InvalidDataset("no labeled examples".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidDataset("need at least two classes".into()));
        }
        let dim = labeled[0].features.len();
        if dim == 0 {
            return Err(Error::InvalidDataset("empty feature vectors".into()));
        }
        for ex in labeled.iter().chain(&test) {
            check_dim(dim, ex.features.len())?;
            if ex.label >= num_classes {
                return Err(Error::InvalidDataset(format!("label {} out of range", ex.label)));
            }
        }
        for x in labeled.iter().map(|e| &e.features).chain(&unlabeled).chain(test.iter().map(|e| &e.features)) {
            check_dim(dim, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset("non-finite feature".into()));
            }
        }
        check_dim(unlabeled.len(), latent.len())?;
        if latent.as_slice().iter().flatten().any(|&y| y >= num_classes) {
            return Err(Error::InvalidDataset("latent label out of range".into()));
        }
        let mut warnings = Vec::new();
        let counts = count_per_class(&labeled, num_classes);
        if let Some(min) = counts.iter().min().copied() {
            if min < IDENTIFIABILITY_MIN_PER_CLASS {
                let msg = format!(
                    "only {min} labeled example(s) for some class; at least {IDENTIFIABILITY_MIN_PER_CLASS} informative labels per class are needed to identify the transition matrix"
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        Ok(Self { num_classes, labeled, unlabeled, latent, test, provenance, warnings })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.labeled[0].features.len()
    }

    pub fn labeled(&self) -> &[LabeledExample] {
        &self.labeled
    }

    pub fn unlabeled_features(&self) -> &[Vec<f64>] {
        &self.unlabeled
    }

    /// Evaluation-only.
    pub fn latent_labels(&self) -> &LatentLabels {
        &self.latent
    }

    pub fn test(&self) -> &[LabeledExample] {
        &self.test
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn mixture(&self) -> Option<&MixtureSpec> {
        match &self.provenance {
            Provenance::Mixture { spec, .. } => Some(spec),
            Provenance::External { .. } => None,
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn labeled_per_class(&self) -> Vec<usize> {
        count_per_class(&self.labeled, self.num_classes)
    }

    pub fn with_latent_labels(mut self, latent: LatentLabels) -> Result<Self> {
        check_dim(self.unlabeled.len(), latent.len())?;
        self.latent = latent;
        Ok(self)
    }

    pub fn with_test(mut self, test: Vec<LabeledExample>) -> Result<Self> {
        let dim = self.dim();
        for ex in &test {
            check_dim(dim, ex.features.len())?;
            if ex.label >= self.num_classes {
                return Err(Error::InvalidDataset(format!("test label {} out of range", ex.label)));
            }
        }
        self.test = test;
        Ok(self)
    }

    /// Same dataset with every latent label replaced by class 0.
    pub fn with_latent_labels_zeroed(&self) -> Self {
        let mut out = self.clone();
        out.latent = LatentLabels(vec![Some(0); self.unlabeled.len()]);
        out
    }
}

fn count_per_class(examples: &[LabeledExample], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for ex in examples {
        counts[ex.label] += 1;
    }
    counts
}

/// Samples a dataset from `spec`: exactly `n_labeled_per_class` labeled
/// examples per class, then unlabeled and test points with classes drawn
/// from the priors. Pure function of its arguments.
pub fn generate(
    spec: &MixtureSpec,
    n_labeled_per_class: usize,
    m_unlabeled: usize,
    n_test: usize,
    seed: u64,
) -> Result<SslDataset> {
    spec.validate()?;
    if n_labeled_per_class == 0 || m_unlabeled == 0 || n_test == 0 {
        return Err(Error::InvalidInput("all split sizes must be positive".into()));
    }
    let k = spec.num_classes();
    let n_labeled = n_labeled_per_class * k;
    if m_unlabeled < n_labeled {
        return Err(Error::InvalidInput(format!(
            "unlabeled pool ({m_unlabeled}) must be larger than the labeled set ({n_labeled})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(n_labeled);
    for class in 0..k {
        for _ in 0..n_labeled_per_class {
            labeled.push(LabeledExample { features: spec.sample_features(class, &mut rng), label: class });
        }
    }
    let mut unlabeled = Vec::with_capacity(m_unlabeled);
    let mut latent = Vec::with_capacity(m_unlabeled);
    for _ in 0..m_unlabeled {
        let class = spec.sample_class(&mut rng);
        unlabeled.push(spec.sample_features(class, &mut rng));
        latent.push(Some(class));
    }
    let test = (0..n_test)
        .map(|_| {
            let class = spec.sample_class(&mut rng);
            LabeledExample { features: spec.sample_features(class, &mut rng), label: class }
        })
        .collect();
    SslDataset::new(
        k,
        labeled,
        unlabeled,
        LatentLabels(latent),
        test,
        Provenance::Mixture { spec: spec.clone(), seed },
    )
}
