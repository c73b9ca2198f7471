//! Cumulative return, Sharpe ratio and maximum drawdown of an equity curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("equity curve is empty")]
    Empty,
    #[error("equity curve needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("initial equity must be positive, got {0}")]
    NonPositiveStart(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub cr_pct: f64,
    pub sharpe: f64,
    pub mdd_pct: f64,
}

impl PerformanceSummary {
    /// Sharpe falls back to 0 for single-point curves so one-day runs still summarize.
    pub fn of(curve: &[f64]) -> Result<Self, MetricsError> {
        Ok(PerformanceSummary {
            cr_pct: cumulative_return(curve)?,
            sharpe: match sharpe_ratio(curve, 0.0, TRADING_DAYS) {
                Err(MetricsError::TooShort(_)) => 0.0,
                other => other?,
            },
            mdd_pct: max_drawdown(curve)?,
        })
    }
}

pub fn cumulative_return(curve: &[f64]) -> Result<f64, MetricsError> {
    let (&first, &last) = match (curve.first(), curve.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(MetricsError::Empty),
    };
    if first <= 0.0 {
        return Err(MetricsError::NonPositiveStart(first));
    }
    Ok(100.0 * (last / first - 1.0))
}

pub fn daily_returns(curve: &[f64]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Annualized mean excess daily return over its sample standard deviation.
/// Zero variance gives 0.
pub fn sharpe_ratio(curve: &[f64], rf_daily: f64, periods_per_year: f64) -> Result<f64, MetricsError> {
    if curve.len() < 2 {
        return Err(MetricsError::TooShort(curve.len()));
    }
    let r = daily_returns(curve);
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    if r.len() < 2 {
        return Ok(0.0);
    }
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    // Returns that are equal up to rounding count as constant.
    if std <= 1e-12 * mean.abs() {
        return Ok(0.0);
    }
    Ok(periods_per_year.sqrt() * (mean - rf_daily) / std)
}

pub fn max_drawdown(curve: &[f64]) -> Result<f64, MetricsError> {
    let mut peak = *curve.first().ok_or(MetricsError::Empty)?;
    let mut worst = 0.0f64;
    for &e in curve {
        peak = peak.max(e);
        if peak > 0.0 {
            worst = worst.max((peak - e) / peak);
        }
    }
    Ok(100.0 * worst)
}
