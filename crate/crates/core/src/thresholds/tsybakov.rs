use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted margin condition `P[margin ≤ δ] ≤ C·δ^α` on a grid of `δ` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsybakovFit {
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
    pub delta0: f64,
    /// `(δ, empirical fraction of margins ≤ δ)` for every grid point.
    pub grid: Vec<(f64, f64)>,
    /// Factor applied to the least-squares `C` to make the curve dominate the grid.
    pub inflation: f64,
}

impl TsybakovFit {
    pub fn curve(&self, delta: f64) -> f64 {
        self.c * delta.powf(self.alpha)
    }

    /// Largest shortfall of the curve below the empirical frequencies (zero by construction).
    pub fn slack(&self) -> f64 {
        self.grid.iter().map(|&(d, f)| (f - self.curve(d)).max(0.0)).fold(0.0, f64::max)
    }
}

/// `n` evenly spaced points `δ₀/n, 2δ₀/n, …, δ₀`.
pub fn linear_grid(delta0: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| delta0 * i as f64 / n as f64).collect()
}

const MIN_ALPHA: f64 = 1e-3;

pub fn fit_tsybakov(margins: &[f64], grid: &[f64]) -> Result<TsybakovFit> {
    if margins.is_empty() {
        return Err(Error::InvalidInput("no margin samples".into()));
    }
    if let Some(m) = margins.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidInput(format!("margin {m} outside [0, 1]")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty delta grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 || grid[grid.len() - 1] > 1.0 {
        return Err(Error::InvalidInput("delta grid must be strictly increasing within (0, 1]".into()));
    }

    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let points: Vec<(f64, f64)> = grid
        .iter()
        .map(|&d| (d, sorted.partition_point(|m| *m <= d) as f64 / n))
        .collect();

    let logs: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(d, f)| (d.ln(), f.ln())).collect();
    if logs.is_empty() {
        return Err(Error::DegenerateFit(format!(
            "no margin falls below delta0 = {}",
            grid[grid.len() - 1]
        )));
    }

    let (alpha, log_c) = if logs.len() == 1 {
        // a single point pins the curve only up to its shape; assume linear
        (1.0, logs[0].1 - logs[0].0)
    } else {
        let m = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = (sxy / sxx).max(MIN_ALPHA);
        (slope, my - slope * mx)
    };
    let c_ls = log_c.exp();

    let worst = points.iter().map(|&(d, f)| f / (c_ls * d.powf(alpha))).fold(0.0, f64::max);
    let mut inflation = worst.max(1.0);
    let mut fit = TsybakovFit { c: c_ls * inflation, alpha, delta0: grid[grid.len() - 1], grid: points, inflation };
    // guard against the last ulp of rounding in C·δ^α
    while fit.slack() > 0.0 {
        inflation *= 1.0 + 1e-12;
        fit.c = c_ls * inflation;
        fit.inflation = inflation;
    }
    Ok(fit)
}
