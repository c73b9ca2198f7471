#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;
use finrs_core::backtest::{run, Agents, BacktestError, BacktestResult, DataBundle};
use finrs_core::config::{PolicyKind, RunConfig, RunSection};
use finrs_core::market_data::{NewsItem, PriceSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

pub fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

/// Whole-range run on ticker TEST with a fixed promotion threshold.
pub fn config_for(policy: PolicyKind) -> RunConfig {
    let mut section = RunSection::new("TEST");
    section.policy = policy;
    let mut config = RunConfig::new(section);
    config.memory.theta_p = Some(1.0);
    config
}

/// Positive random walk rounded to cents.
pub fn random_walk(seed: u64, n: usize, start: f64, step: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, step).unwrap();
    let mut price = start;
    (0..n)
        .map(|_| {
            price = (price + normal.sample(&mut rng)).max(1.0);
            (price * 100.0).round() / 100.0
        })
        .collect()
}

pub fn news(date: NaiveDate, ticker: &str, headline: &str) -> NewsItem {
    NewsItem {
        timestamp: date.and_hms_opt(9, 0, 0).unwrap(),
        ticker: ticker.into(),
        headline: headline.into(),
        body: String::new(),
        source: "wire".into(),
    }
}

/// Daily bars from [`day0`] plus the given news.
pub fn bundle(closes: &[f64], news: Vec<NewsItem>) -> DataBundle {
    let mut data = DataBundle::new(PriceSeries::from_closes("TEST", day0(), closes).unwrap());
    data.news = news;
    data
}

pub fn run_series(config: &RunConfig, closes: &[f64], news: Vec<NewsItem>) -> Result<BacktestResult, BacktestError> {
    let data = bundle(closes, news);
    let mut agents = Agents::stub(config, &data.lexicon)?;
    run(config, &data, &mut agents, None)
}

pub fn example_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.example.toml")
}

/// The annotated example config and the sample data it points at.
pub fn sample_data() -> (RunConfig, DataBundle) {
    let config = RunConfig::load(&example_config_path()).expect("example config loads");
    let data = DataBundle::load(&config).expect("sample data loads");
    (config, data)
}

fn fenced(v: Value) -> String {
    format!("Considered the inputs.\n```json\n{v}\n```")
}

fn number_after(text: &str, marker: &str) -> Option<f64> {
    let rest = &text[text.find(marker)? + marker.len()..];
    let end = rest.find([',', '\n']).unwrap_or(rest.len());
    rest[..end].trim().parse().ok()
}

/// Deterministic stand-in for a chat model, keyed on the request text.
pub fn scripted_reply(request_body: &str) -> String {
    let request: Value = serde_json::from_str(request_body).expect("chat request json");
    let system = request["messages"][0]["content"].as_str().unwrap_or_default();
    let user = request["messages"][1]["content"].as_str().unwrap_or_default();
    if system.contains("analyst covering") {
        let sentiment = if user.contains("beats") {
            0.7
        } else if user.contains("misses") {
            -0.6
        } else {
            0.0
        };
        fenced(serde_json::json!({"summary": "scripted", "sentiment": sentiment, "risk_cues": ["none"]}))
    } else if system.contains("trading direction") {
        let d1 = number_after(user, "Price change over 1 day:").unwrap_or(0.0);
        let action = if d1 > 0.0 {
            "buy"
        } else if d1 < -1.0 {
            "sell"
        } else {
            "hold"
        };
        fenced(serde_json::json!({"action": action, "rationale": format!("d1 {d1}")}))
    } else if system.contains("edge of a proposed") {
        fenced(serde_json::json!({"win_prob": 0.65, "payoff_ratio": 1.2, "rationale": "scripted"}))
    } else {
        fenced(serde_json::json!({"note": "follow the short trend"}))
    }
}
