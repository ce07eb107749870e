//! Aggregation of replications and the report table.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DesignKind {
    Cre,
    Rem,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Cre => "CRE",
            DesignKind::Rem => "ReM",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            DesignKind::Cre => 0,
            DesignKind::Rem => 1,
        }
    }
}

/// One assignment and its analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub design: DesignKind,
    pub tau_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    pub attempts: u64,
    pub clamped: bool,
}

/// Metrics of one design within one cell. `priv_pct` and `primse_pct` are
/// relative to the CRE baseline and zero for the baseline itself.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    pub design: DesignKind,
    pub replications: usize,
    pub bias: f64,
    /// Variance about the replication mean.
    pub variance: f64,
    /// Mean squared error about the true QTE.
    pub mse: f64,
    pub priv_pct: f64,
    pub primse_pct: f64,
    pub ci_length: f64,
    pub coverage: f64,
    pub clamps: usize,
    pub mean_attempts: f64,
}

pub fn summarize(
    design: DesignKind,
    results: &[ReplicationResult],
    tau: f64,
) -> Result<DesignSummary> {
    let m = results.len();
    if m < 2 {
        return Err(Error::invalid("summaries need at least two replications"));
    }
    let mf = m as f64;
    let mean = results.iter().map(|r| r.tau_hat).sum::<f64>() / mf;
    let variance = results
        .iter()
        .map(|r| (r.tau_hat - mean).powi(2))
        .sum::<f64>()
        / mf;
    let mse = results
        .iter()
        .map(|r| (r.tau_hat - tau).powi(2))
        .sum::<f64>()
        / mf;
    Ok(DesignSummary {
        design,
        replications: m,
        bias: mean - tau,
        variance,
        mse,
        priv_pct: 0.0,
        primse_pct: 0.0,
        ci_length: results.iter().map(|r| r.ci_high - r.ci_low).sum::<f64>() / mf,
        coverage: results.iter().filter(|r| r.covered).count() as f64 / mf,
        clamps: results.iter().filter(|r| r.clamped).count(),
        mean_attempts: results.iter().map(|r| r.attempts as f64).sum::<f64>() / mf,
    })
}

/// `100 (1 - other / base)`.
pub fn percent_reduction(base: f64, other: f64) -> f64 {
    100.0 * (1.0 - other / base)
}

/// Sets the relative metrics of `other` against `baseline`.
pub fn compare(baseline: &DesignSummary, other: &mut DesignSummary) {
    other.priv_pct = percent_reduction(baseline.variance, other.variance);
    other.primse_pct = percent_reduction(baseline.mse, other.mse);
}

/// Results of one `(r1, α, R̃² target)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub r1: f64,
    pub alpha: f64,
    pub r2_target: f64,
    pub r2_oracle: f64,
    pub sigma: f64,
    pub tau: f64,
    pub threshold: f64,
    /// `100 (1 - v_{K,a}) R̃²` from the oracle `R̃²`.
    pub priasv_pct: f64,
    pub cre: DesignSummary,
    pub rem: DesignSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub cells: Vec<CellReport>,
}

pub const REPORT_COLUMNS: [&str; 16] = [
    "r1",
    "alpha",
    "r2_target",
    "design",
    "Bias",
    "PRIV",
    "PRIMSE",
    "CI Length",
    "Coverage",
    "clamps",
    "mean_attempts",
    "r2_oracle",
    "PRIASV",
    "sigma",
    "tau",
    "replications",
];

/// Tab-separated table, one row per `(r1, α, R̃² target, design)`.
pub fn render_report(report: &ScenarioReport) -> String {
    let mut out = String::new();
    out.push_str(&REPORT_COLUMNS.join("\t"));
    out.push('\n');
    let mut cells: Vec<&CellReport> = report.cells.iter().collect();
    cells.sort_by(|a, b| {
        b.r1.total_cmp(&a.r1)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.r2_target.total_cmp(&b.r2_target))
    });
    for cell in cells {
        for (summary, priasv) in [(&cell.cre, 0.0), (&cell.rem, cell.priasv_pct)] {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t{:.1}\t{:.4}\t{:.3}\t{:.6}\t{:.6}\t{}",
                cell.r1,
                cell.alpha,
                cell.r2_target,
                summary.design.name(),
                summary.bias,
                summary.priv_pct,
                summary.primse_pct,
                summary.ci_length,
                summary.coverage,
                summary.clamps,
                summary.mean_attempts,
                cell.r2_oracle,
                priasv,
                cell.sigma,
                cell.tau,
                summary.replications,
            )
            .expect("writing to a string");
        }
    }
    out
}

pub fn write_report(path: &Path, report: &ScenarioReport) -> Result<()> {
    std::fs::write(path, render_report(report))
        .map_err(|e| Error::Io(e).context(format!("writing {}", path.display())))
}
