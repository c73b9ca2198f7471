//! Browser bindings for the demo page: policy comparison on a synthetic
//! series, a Kelly/CVaR sizing explorer and the reward surface.
//!
//! Every export returns a JSON string so the page needs no glue types.

use finrs_core::backtest::{run, Agents, DataBundle};
use finrs_core::config::{PolicyKind, RunConfig, RunSection};
use finrs_core::decision::{cvar, kelly_fraction, value_at_risk};
use finrs_core::market_data::PriceSeries;
use finrs_core::reward::{reward_value, ActionScale, MomentumScore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const TRAIN_DAYS: usize = 120;

fn gbm(seed: u64, n: usize, drift_pct: f64, vol_pct: f64) -> Result<Vec<f64>, String> {
    let normal = Normal::new(drift_pct / 100.0, vol_pct / 100.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut price = 100.0f64;
    Ok((0..n)
        .map(|_| {
            price *= normal.sample(&mut rng).exp();
            (price * 100.0).round() / 100.0
        })
        .collect())
}

#[derive(Serialize)]
struct StrategyRun {
    name: &'static str,
    equity: Vec<f64>,
    position: Vec<i64>,
    cr_pct: f64,
    sharpe: f64,
    mdd_pct: f64,
    trades: usize,
}

#[derive(Serialize)]
struct Comparison {
    closes: Vec<f64>,
    theta_p: f64,
    strategies: Vec<StrategyRun>,
}

/// Runs every built-in policy over a seeded random walk.
pub fn compare_policies(seed: u64, days: usize, drift_pct: f64, vol_pct: f64, fee_bps: f64) -> Result<String, String> {
    let days = days.clamp(40, 2000);
    let closes = gbm(seed, TRAIN_DAYS + days, drift_pct, vol_pct)?;
    let start = chrono_start();
    let series = PriceSeries::from_closes("DEMO", start, &closes).map_err(|e| e.to_string())?;
    let data = DataBundle::new(series.clone());
    let mut out = Comparison {
        closes: closes[TRAIN_DAYS..].to_vec(),
        theta_p: 0.0,
        strategies: Vec::new(),
    };
    for (name, kind) in [
        ("FinRS rules", PolicyKind::Finrs),
        ("Buy & hold", PolicyKind::BuyHold),
        ("MACD", PolicyKind::Macd),
        ("RSI", PolicyKind::Rsi),
        ("Random", PolicyKind::Random),
    ] {
        let mut section = RunSection::new("DEMO");
        section.policy = kind;
        section.seed = seed;
        section.start = Some(series.dates()[TRAIN_DAYS]);
        let mut config = RunConfig::new(section);
        config.execution.fee_bps = fee_bps.max(0.0);
        let mut agents = Agents::stub(&config, &data.lexicon).map_err(|e| e.to_string())?;
        let result = run(&config, &data, &mut agents, None).map_err(|e| e.to_string())?;
        out.theta_p = result.theta_p;
        out.strategies.push(StrategyRun {
            name,
            equity: result.equity_curve(),
            position: result.equity.iter().map(|p| p.position).collect(),
            cr_pct: result.summary.cr_pct,
            sharpe: result.summary.sharpe,
            mdd_pct: result.summary.mdd_pct,
            trades: result.trades.len(),
        });
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn chrono_start() -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date")
}

#[derive(Serialize)]
struct Sizing {
    kelly_raw: f64,
    kelly_scaled: f64,
    var: f64,
    cvar: f64,
    cvar_cap: f64,
    fraction: f64,
    kelly_curve: Vec<[f64; 2]>,
    returns_histogram: Vec<[f64; 2]>,
}

/// Scaled Kelly fraction and its CVaR cap for normally distributed daily returns.
pub fn sizing_explorer(
    win_prob: f64,
    payoff_ratio: f64,
    kelly_scale: f64,
    alpha: f64,
    budget: f64,
    vol_pct: f64,
    seed: u64,
) -> Result<String, String> {
    let normal = Normal::new(0.0, vol_pct.max(1e-6) / 100.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns: Vec<f64> = (0..20_000).map(|_| normal.sample(&mut rng)).collect();
    let risk = cvar(&returns, alpha).map_err(|e| e.to_string())?;
    let var = value_at_risk(&returns, alpha).map_err(|e| e.to_string())?;
    let kelly = kelly_fraction(win_prob, payoff_ratio, kelly_scale);
    let cap = if risk > 0.0 { budget / risk } else { f64::INFINITY };

    let lo = returns.iter().cloned().fold(f64::MAX, f64::min);
    let hi = returns.iter().cloned().fold(f64::MIN, f64::max);
    let bins = 60;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for r in &returns {
        let i = (((r - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let out = Sizing {
        kelly_raw: win_prob - (1.0 - win_prob) / payoff_ratio,
        kelly_scaled: kelly,
        var,
        cvar: risk,
        cvar_cap: cap.min(1e9),
        fraction: kelly.min(cap),
        kelly_curve: (0..=100)
            .map(|i| {
                let p = i as f64 / 100.0;
                [p, kelly_fraction(p, payoff_ratio, kelly_scale)]
            })
            .collect(),
        returns_histogram: counts
            .iter()
            .enumerate()
            .map(|(i, c)| [lo + (i as f64 + 0.5) * width, *c as f64])
            .collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Surface {
    total: f64,
    max_position: i64,
    /// `grid[before][after]`
    grid: Vec<Vec<f64>>,
}

/// Reward for every (position before, position after) pair up to `max_position`.
pub fn reward_surface(m_s: f64, m_m: f64, m_l: f64, multi_timescale: bool, trade_delta: bool, max_position: i64) -> String {
    let max_position = max_position.clamp(1, 50);
    let full = MomentumScore::new(m_s, m_m, m_l, false);
    let score = if multi_timescale { full } else { full.short_only() };
    let scale = if trade_delta {
        ActionScale::TradeDelta
    } else {
        ActionScale::Position
    };
    let grid = (0..=max_position)
        .map(|before| {
            (0..=max_position)
                .map(|after| reward_value(before, after, &score, scale).0)
                .collect()
        })
        .collect();
    serde_json::to_string(&Surface {
        total: score.total,
        max_position,
        grid,
    })
    .expect("surface serializes")
}

#[wasm_bindgen(js_name = comparePolicies)]
pub fn compare_policies_js(seed: u32, days: u32, drift_pct: f64, vol_pct: f64, fee_bps: f64) -> Result<String, JsValue> {
    compare_policies(seed as u64, days as usize, drift_pct, vol_pct, fee_bps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = sizingExplorer)]
pub fn sizing_explorer_js(
    win_prob: f64,
    payoff_ratio: f64,
    kelly_scale: f64,
    alpha: f64,
    budget: f64,
    vol_pct: f64,
    seed: u32,
) -> Result<String, JsValue> {
    sizing_explorer(win_prob, payoff_ratio, kelly_scale, alpha, budget, vol_pct, seed as u64)
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = rewardSurface)]
pub fn reward_surface_js(m_s: f64, m_m: f64, m_l: f64, multi_timescale: bool, trade_delta: bool, max_position: i32) -> String {
    reward_surface(m_s, m_m, m_l, multi_timescale, trade_delta, max_position as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn comparison_has_every_policy() {
        let v: Value = serde_json::from_str(&compare_policies(3, 120, 0.05, 1.5, 0.0).unwrap()).unwrap();
        let s = v["strategies"].as_array().unwrap();
        assert_eq!(s.len(), 5);
        for strat in s {
            assert_eq!(strat["equity"].as_array().unwrap().len(), 120);
        }
        assert_eq!(compare_policies(3, 120, 0.05, 1.5, 0.0), compare_policies(3, 120, 0.05, 1.5, 0.0));
    }

    #[test]
    fn sizing_is_capped_by_cvar() {
        let v: Value = serde_json::from_str(&sizing_explorer(0.9, 2.0, 1.0, 0.95, 0.02, 3.0, 1).unwrap()).unwrap();
        let f = v["fraction"].as_f64().unwrap();
        assert!(f < v["kelly_scaled"].as_f64().unwrap());
        assert!((f - v["cvar_cap"].as_f64().unwrap()).abs() < 1e-12);
        assert!(sizing_explorer(0.5, 1.0, 0.5, 0.3, 0.05, 2.0, 1).is_err());
    }

    #[test]
    fn surface_diagonal_is_the_inertia_penalty() {
        let v: Value = serde_json::from_str(&reward_surface(1.0, 2.0, -0.5, true, false, 4)).unwrap();
        let grid = v["grid"].as_array().unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid[2][2].as_f64().unwrap(), -6.25);
        assert_eq!(grid[0][3].as_f64().unwrap(), 7.5);
    }
}
