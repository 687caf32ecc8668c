use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use instant_core::engine::{RunMetrics, RunSummary};
use instant_core::thresholds::ThresholdPolicy;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::train::{write_json, RunManifest, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE};
use super::verify::read_json;
use crate::error::CliError;
use crate::svg::{line_chart, Series};

pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub policy: String,
    pub seed: u64,
    pub final_test_acc: f64,
    pub dir: PathBuf,
}

/// Seed-averaged curves; `None` where no seed has a value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub iter: Vec<usize>,
    pub test_acc: Vec<Option<f64>>,
    pub util: Vec<Option<f64>>,
    pub pl_acc: Vec<Option<f64>>,
    pub mean_tau: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub checkpoints: usize,
    pub satisfied: usize,
    pub final_bound: Option<f64>,
    pub final_empirical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub kind: String,
    /// `None` for policies without a relative threshold.
    pub relative_threshold: Option<bool>,
    pub distribution_alignment: bool,
    pub seeds: Vec<u64>,
    pub mean_final_acc: f64,
    /// Half-width of the confidence interval; absent with a single seed.
    pub ci_half_width: Option<f64>,
    pub curves: Curves,
    pub bound: Option<BoundSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub library_version: String,
    pub confidence: f64,
    /// Set when some policy has fewer than two seeds.
    pub ci_omitted: bool,
    pub policies: Vec<PolicySummary>,
    pub runs: Vec<RunEntry>,
}

struct LoadedRun {
    dir: PathBuf,
    manifest: RunManifest,
    summary: RunSummary,
    metrics: RunMetrics,
}

fn is_run_dir(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file() && dir.join(METRICS_FILE).is_file()
}

/// Run directories at or below `roots`, in sorted order. Missing roots are skipped.
pub fn discover(roots: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    let mut stack: Vec<PathBuf> = roots.iter().rev().cloned().collect();
    while let Some(dir) = stack.pop() {
        if !dir.is_dir() {
            continue;
        }
        if is_run_dir(&dir) {
            found.push(dir);
            continue;
        }
        let mut children: Vec<PathBuf> = std::fs::read_dir(&dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        stack.extend(children.into_iter().rev());
    }
    Ok(found)
}

fn load(dir: &Path) -> Result<LoadedRun, CliError> {
    let metrics = RunMetrics::read_csv(&dir.join(METRICS_FILE))
        .map_err(|e| anyhow!("{}: inconsistent metrics schema: {e}", dir.display()))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest: read_json(&dir.join(MANIFEST_FILE))?,
        summary: read_json(&dir.join(SUMMARY_FILE))?,
        metrics,
    })
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Half-width of the two-sided t interval for the mean of `xs`.
pub fn ci_half_width(xs: &[f64], confidence: f64) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some(t.inverse_cdf(0.5 + confidence / 2.0) * (var / n as f64).sqrt())
}

fn summarize(name: &str, runs: &[&LoadedRun]) -> Result<PolicySummary, CliError> {
    let first = runs[0];
    let grid: Vec<usize> = first.metrics.rows.iter().map(|r| r.iter).collect();
    for r in runs {
        let other: Vec<usize> = r.metrics.rows.iter().map(|x| x.iter).collect();
        if other != grid {
            return Err(CliError::Runtime(anyhow!(
                "inconsistent metric schemas: {} and {} log different iterations",
                first.dir.display(),
                r.dir.display()
            )));
        }
    }
    let column = |f: &dyn Fn(&instant_core::engine::MetricsRow) -> f64| -> Vec<Option<f64>> {
        (0..grid.len()).map(|i| mean_finite(runs.iter().map(|r| f(&r.metrics.rows[i])))).collect()
    };
    let curves = Curves {
        iter: grid.clone(),
        test_acc: column(&|r| r.test_acc),
        util: column(&|r| r.util),
        pl_acc: column(&|r| r.pl_acc),
        mean_tau: column(&|r| r.mean_tau),
    };
    let finals: Vec<f64> = runs.iter().map(|r| r.summary.final_test_acc).collect();
    let train = &first.manifest.train;
    let has_bound = matches!(train.policy, ThresholdPolicy::Instant { .. })
        && runs.iter().any(|r| r.metrics.rows.iter().any(|x| x.bound.is_finite()));
    let bound = has_bound.then(|| {
        let mut checkpoints = 0;
        let mut satisfied = 0;
        for r in runs {
            for row in r.metrics.after_warmup(r.manifest.train.warmup_steps) {
                checkpoints += 1;
                if row.bound.is_finite() && row.bound_n > 0 {
                    let sigma = (row.bound * (1.0 - row.bound) / row.bound_n as f64).sqrt();
                    satisfied += usize::from(row.emp_rate >= row.bound - 2.0 * sigma);
                }
            }
        }
        BoundSummary {
            checkpoints,
            satisfied,
            final_bound: mean_finite(runs.iter().filter_map(|r| r.metrics.last()).map(|x| x.bound)),
            final_empirical: mean_finite(runs.iter().filter_map(|r| r.metrics.last()).map(|x| x.emp_rate)),
        }
    });
    Ok(PolicySummary {
        name: name.to_string(),
        kind: train.policy.kind_name().to_string(),
        relative_threshold: match train.policy {
            ThresholdPolicy::Fixed { .. } => None,
            _ => Some(train.relative_threshold),
        },
        distribution_alignment: train.distribution_alignment,
        seeds: runs.iter().map(|r| r.manifest.seed).collect(),
        mean_final_acc: finals.iter().sum::<f64>() / finals.len() as f64,
        ci_half_width: ci_half_width(&finals, CONFIDENCE),
        curves,
        bound,
    })
}

/// Aggregates the runs found under `roots` and writes `report.md`,
/// `report.json` and SVG charts into `out_dir`.
pub fn run(roots: &[PathBuf], out_dir: &Path) -> Result<ComparisonReport, CliError> {
    let dirs = discover(roots)?;
    if dirs.is_empty() {
        return Err(CliError::Config(format!("no completed run directories under {roots:?}")));
    }
    let runs = dirs.iter().map(|d| load(d)).collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    for r in &runs {
        if !seen.insert((r.manifest.policy_name.clone(), r.manifest.seed)) {
            return Err(CliError::Config(format!(
                "policy {} seed {} appears in more than one run directory",
                r.manifest.policy_name, r.manifest.seed
            )));
        }
    }
    let mut names: Vec<&str> = Vec::new();
    for r in &runs {
        if !names.contains(&r.manifest.policy_name.as_str()) {
            names.push(&r.manifest.policy_name);
        }
    }
    let policies = names
        .iter()
        .map(|name| {
            let group: Vec<&LoadedRun> = runs.iter().filter(|r| r.manifest.policy_name == *name).collect();
            summarize(name, &group)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = ComparisonReport {
        library_version: instant_core::VERSION.to_string(),
        confidence: CONFIDENCE,
        ci_omitted: policies.iter().any(|p| p.ci_half_width.is_none()),
        runs: runs
            .iter()
            .map(|r| RunEntry {
                policy: r.manifest.policy_name.clone(),
                seed: r.manifest.seed,
                final_test_acc: r.summary.final_test_acc,
                dir: r.dir.clone(),
            })
            .collect(),
        policies,
    };

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join("report.json"), &report)?;
    std::fs::write(out_dir.join("report.md"), markdown(&report)).context("writing report.md")?;
    for (file, title, label, pick, range) in CHARTS {
        let series: Vec<Series> = report
            .policies
            .iter()
            .map(|p| Series {
                label: p.name.clone(),
                points: p.curves.iter.iter().zip(pick(&p.curves)).map(|(&i, v)| (i as f64, *v)).collect(),
            })
            .collect();
        let svg = line_chart(title, "iteration", label, &series, range);
        std::fs::write(out_dir.join(file), svg).with_context(|| format!("writing {file}"))?;
    }
    log::info!("report for {} runs written to {}", report.runs.len(), out_dir.display());
    Ok(report)
}

type Pick = fn(&Curves) -> &Vec<Option<f64>>;

const CHARTS: [(&str, &str, &str, Pick, Option<(f64, f64)>); 3] = [
    ("accuracy.svg", "Test accuracy", "top-1 accuracy", |c| &c.test_acc, None),
    ("utilization.svg", "Utilization ratio", "accepted fraction", |c| &c.util, Some((0.0, 1.0))),
    ("pseudo_label_accuracy.svg", "Pseudo-label accuracy", "accepted-set accuracy", |c| &c.pl_acc, None),
];

fn mark(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "✓",
        Some(false) | None => "✗",
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{:.2}", 100.0 * x))
}

fn num(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

pub fn markdown(report: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Policy comparison\n");
    let _ = writeln!(s, "{} runs, {} policies, library {}.", report.runs.len(), report.policies.len(), report.library_version);
    if report.ci_omitted {
        let _ = writeln!(s, "Confidence intervals omitted: at least one policy has a single seed.\n");
    } else {
        let _ = writeln!(s, "Intervals are {:.0}% t-intervals over seeds.\n", 100.0 * report.confidence);
    }
    let _ = writeln!(s, "## Final test accuracy\n");
    let _ = writeln!(s, "| Method | Policy | RT | DA | Seeds | Acc. (%) |");
    let _ = writeln!(s, "|---|---|:-:|:-:|--:|--:|");
    for p in &report.policies {
        let acc = match p.ci_half_width {
            Some(h) => format!("{:.2} ± {:.2}", 100.0 * p.mean_final_acc, 100.0 * h),
            None => format!("{:.2}", 100.0 * p.mean_final_acc),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {acc} |",
            p.name,
            p.kind,
            mark(p.relative_threshold),
            mark(Some(p.distribution_alignment)),
            p.seeds.len()
        );
    }
    let _ = writeln!(s, "\n## Pseudo-labels at the last logged step\n");
    let _ = writeln!(s, "| Method | Pseudo-label acc. (%) | Utilization (%) | Mean τ |");
    let _ = writeln!(s, "|---|--:|--:|--:|");
    for p in &report.policies {
        let last = |v: &Vec<Option<f64>>| v.last().copied().flatten();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            p.name,
            pct(last(&p.curves.pl_acc)),
            pct(last(&p.curves.util)),
            num(last(&p.curves.mean_tau))
        );
    }
    if report.policies.iter().any(|p| p.bound.is_some()) {
        let _ = writeln!(s, "\n## Correctness bound against the empirical rate\n");
        let _ = writeln!(s, "Checkpoints after warm-up where the empirical rate is at least the bound minus two binomial σ.\n");
        let _ = writeln!(s, "| Method | Satisfied | Final bound | Final empirical |");
        let _ = writeln!(s, "|---|--:|--:|--:|");
        for p in &report.policies {
            if let Some(b) = &p.bound {
                let _ = writeln!(
                    s,
                    "| {} | {}/{} | {} | {} |",
                    p.name,
                    b.satisfied,
                    b.checkpoints,
                    num(b.final_bound),
                    num(b.final_empirical)
                );
            }
        }
    }
    let _ = writeln!(s, "\n## Runs\n");
    let _ = writeln!(s, "| Method | Seed | Acc. (%) |");
    let _ = writeln!(s, "|---|--:|--:|");
    for r in &report.runs {
        let _ = writeln!(s, "| {} | {} | {:.2} |", r.policy, r.seed, 100.0 * r.final_test_acc);
    }
    let _ = writeln!(s, "\n![accuracy](accuracy.svg) ![utilization](utilization.svg) ![pseudo-label accuracy](pseudo_label_accuracy.svg)");
    s
}
