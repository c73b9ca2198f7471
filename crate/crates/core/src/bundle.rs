//! Result bundle directory: the files a run leaves behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{BacktestResult, EquityPoint};
use crate::config::{AblationFlags, RunConfig};
use crate::portfolio::trades_jsonl;
use crate::reward::rewards_csv;

pub const EQUITY_CSV_HEADER: &str = "t,date,close,cash,position,equity";
pub const BUNDLE_FILES: [&str; 6] = [
    "equity.csv",
    "trades.jsonl",
    "rewards.csv",
    "memory.jsonl",
    "summary.json",
    "config.json",
];

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub ticker: String,
    pub policy: String,
    pub ablation: AblationFlags,
    pub days: usize,
    pub trades: usize,
    pub cr_pct: f64,
    pub sharpe: f64,
    pub mdd_pct: f64,
    pub theta_p: f64,
    pub config_hash: String,
}

impl BundleSummary {
    pub fn of(result: &BacktestResult, config: &RunConfig) -> Self {
        BundleSummary {
            ticker: result.ticker.clone(),
            policy: result.policy.clone(),
            ablation: config.ablation,
            days: result.equity.len(),
            trades: result.trades.len(),
            cr_pct: result.summary.cr_pct,
            sharpe: result.summary.sharpe,
            mdd_pct: result.summary.mdd_pct,
            theta_p: result.theta_p,
            config_hash: result.config_hash.clone(),
        }
    }
}

pub fn equity_csv(points: &[EquityPoint]) -> String {
    let mut out = String::from(EQUITY_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.t, p.date, p.close, p.cash, p.position, p.equity
        ));
    }
    out
}

/// File name and contents of every bundle file, in [`BUNDLE_FILES`] order.
pub fn render_bundle(result: &BacktestResult, config: &RunConfig) -> Vec<(&'static str, String)> {
    let summary = BundleSummary::of(result, config);
    let mut summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    let mut config_json = serde_json::to_string_pretty(config).expect("config serializes");
    config_json.push('\n');
    vec![
        ("equity.csv", equity_csv(&result.equity)),
        ("trades.jsonl", trades_jsonl(&result.trades)),
        ("rewards.csv", rewards_csv(&result.rewards)),
        ("memory.jsonl", result.memory.to_jsonl()),
        ("summary.json", summary_json),
        ("config.json", config_json),
    ]
}

pub fn write_bundle(dir: &Path, result: &BacktestResult, config: &RunConfig) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in render_bundle(result, config) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<BundleSummary, BundleError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Corrupt {
        path,
        reason: e.to_string(),
    })
}

pub fn read_equity(dir: &Path) -> Result<Vec<EquityPoint>, BundleError> {
    let path = dir.join("equity.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| BundleError::Corrupt {
        path: path.clone(),
        reason,
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| corrupt(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != EQUITY_CSV_HEADER {
        return Err(corrupt(format!("expected header `{EQUITY_CSV_HEADER}`")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| corrupt(e.to_string())))
        .collect()
}
