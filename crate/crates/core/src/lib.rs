//! Risk-sensitive trading backtest engine.
//!
//! A run walks daily bars: signals are filtered and analyzed into layered
//! memory, a direction agent and a sizing agent turn retrieved memory and
//! trailing momentum into an order, the order fills at the close, and a
//! forward-looking multi-horizon reward is reflected back into memory once
//! its horizon has passed.
//!
//! ```
//! use finrs_core::backtest::{run, Agents, DataBundle};
//! use finrs_core::config::{PolicyKind, RunConfig, RunSection};
//! use finrs_core::market_data::PriceSeries;
//!
//! let closes: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
//! let start = chrono::NaiveDate::from_ymd_opt(2025, 1, 6).unwrap();
//! let data = DataBundle::new(PriceSeries::from_closes("DEMO", start, &closes).unwrap());
//!
//! let mut section = RunSection::new("DEMO");
//! section.policy = PolicyKind::BuyHold;
//! let mut config = RunConfig::new(section);
//! config.memory.theta_p = Some(1.0);
//! let mut agents = Agents::stub(&config, &data.lexicon).unwrap();
//! let result = run(&config, &data, &mut agents, None).unwrap();
//! assert_eq!(result.equity.len(), 50);
//! ```

pub mod agent;
pub mod audit;
pub mod backtest;
pub mod bundle;
pub mod config;
pub mod decision;
pub mod llm;
pub mod market_data;
pub mod memory;
pub mod metrics;
pub mod perception;
pub mod portfolio;
pub mod report;
pub mod reward;
pub mod sweep;

pub use agent::AgentError;
pub use backtest::{run, Agents, BacktestError, BacktestResult, DataBundle};
pub use config::{AblationFlags, Axis, RunConfig};
