//! Table rendering for one or more result bundles.
//!
//! Metrics are always recomputed from `equity.csv`; a `summary.json` that
//! disagrees with them is reported as stale rather than trusted.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{read_equity, read_summary, BundleError};
use crate::metrics::{MetricsError, PerformanceSummary};

pub const REPORT_CSV_HEADER: &str = "name,cr_pct,sharpe,mdd_pct";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown format `{other}`; expected csv, json or markdown")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no bundle directories given")]
    NoBundles,
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("{}: {source}", path.display())]
    Metrics {
        path: PathBuf,
        #[source]
        source: MetricsError,
    },
    #[error("{}: summary.json {metric} = {stored} but equity.csv gives {recomputed}", path.display())]
    Stale {
        path: PathBuf,
        metric: &'static str,
        stored: f64,
        recomputed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub cr_pct: f64,
    pub sharpe: f64,
    pub mdd_pct: f64,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, s: &PerformanceSummary) -> Self {
        ReportRow {
            name: name.into(),
            cr_pct: s.cr_pct,
            sharpe: s.sharpe,
            mdd_pct: s.mdd_pct,
        }
    }
}

fn agrees(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Row for the bundle at `dir`, named after the directory.
pub fn load_row(dir: &Path) -> Result<ReportRow, ReportError> {
    let summary = read_summary(dir)?;
    let curve: Vec<f64> = read_equity(dir)?.iter().map(|p| p.equity).collect();
    let fresh = PerformanceSummary::of(&curve).map_err(|source| ReportError::Metrics {
        path: dir.to_path_buf(),
        source,
    })?;
    for (metric, stored, recomputed) in [
        ("cr_pct", summary.cr_pct, fresh.cr_pct),
        ("sharpe", summary.sharpe, fresh.sharpe),
        ("mdd_pct", summary.mdd_pct, fresh.mdd_pct),
    ] {
        if !agrees(stored, recomputed) {
            return Err(ReportError::Stale {
                path: dir.to_path_buf(),
                metric,
                stored,
                recomputed,
            });
        }
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(ReportRow::new(name, &fresh))
}

pub fn load_rows(dirs: &[PathBuf]) -> Result<Vec<ReportRow>, ReportError> {
    if dirs.is_empty() {
        return Err(ReportError::NoBundles);
    }
    dirs.iter().map(|d| load_row(d)).collect()
}

pub fn render(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(REPORT_CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!("{},{},{},{}\n", csv_field(&r.name), r.cr_pct, r.sharpe, r.mdd_pct));
            }
            out
        }
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(rows).expect("rows serialize");
            out.push('\n');
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| Name | CR% | SR | MDD% |\n|---|---:|---:|---:|\n");
            for r in rows {
                out.push_str(&format!(
                    "| {} | {:.2} | {:.2} | {:.2} |\n",
                    r.name.replace('|', "\\|"),
                    r.cr_pct,
                    r.sharpe,
                    r.mdd_pct
                ));
            }
            out
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
