use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thresholds::BoundReport;

/// Column order of the metrics CSV.
pub const METRICS_HEADER: [&str; 13] = [
    "iter", "test_acc", "pl_acc", "util", "mean_tau", "kappa", "est_l1", "bound", "emp_rate", "bound_n",
    "loss", "sup_loss", "unsup_loss",
];

/// One logged step. Undefined quantities are NaN: `pl_acc` when nothing was
/// accepted, the oracle columns when no ground truth is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub test_acc: f64,
    /// Accepted pseudo-labels that match the latent label, since the previous row.
    pub pl_acc: f64,
    /// Accepted fraction of unlabeled instances since the previous row.
    pub util: f64,
    pub mean_tau: f64,
    pub kappa: f64,
    pub est_l1: f64,
    pub bound: f64,
    pub emp_rate: f64,
    pub bound_n: usize,
    pub loss: f64,
    pub sup_loss: f64,
    pub unsup_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn to_csv_string(&self) -> String {
        let mut out = METRICS_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iter, r.test_acc, r.pl_acc, r.util, r.mean_tau, r.kappa, r.est_l1, r.bound, r.emp_rate,
                r.bound_n, r.loss, r.sup_loss, r.unsup_loss
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != METRICS_HEADER {
            return Err(Error::Format(format!("unexpected metrics columns: {}", header.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?);
        }
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Rows logged strictly after `warmup` steps.
    pub fn after_warmup(&self, warmup: usize) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.iter > warmup)
    }
}

/// Self-describing summary written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub iterations: usize,
    pub warmup_steps: usize,
    pub final_test_acc: f64,
    /// Absent for policies without a relative threshold.
    pub final_kappa: Option<f64>,
    pub final_bound: Option<BoundReport>,
    pub library_version: String,
    pub warnings: Vec<String>,
}
