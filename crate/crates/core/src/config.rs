//! Run configuration, loaded from a single TOML file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::{DirectionParams, SizingParams};
use crate::memory::MemoryParams;
use crate::portfolio::ExecutionParams;
use crate::reward::RewardParams;

/// Component switches for ablation runs. All on is the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Risk-sensitive sizing and risk fields in prompts.
    pub rs: bool,
    /// Financial-insight reasoning (multi-horizon momentum, causal preamble).
    pub fip: bool,
    /// Market news and macro signals.
    pub mn: bool,
    /// Multi-timescale reward; off means the 1-day trend only.
    pub mtr: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            rs: true,
            fip: true,
            mn: true,
            mtr: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Rs,
    Fip,
    Mn,
    Mtr,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Rs, Axis::Fip, Axis::Mn, Axis::Mtr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Rs => "rs",
            Axis::Fip => "fip",
            Axis::Mn => "mn",
            Axis::Mtr => "mtr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl AblationFlags {
    pub fn without(mut self, axis: Axis) -> Self {
        match axis {
            Axis::Rs => self.rs = false,
            Axis::Fip => self.fip = false,
            Axis::Mn => self.mn = false,
            Axis::Mtr => self.mtr = false,
        }
        self
    }

    pub fn get(&self, axis: Axis) -> bool {
        match axis {
            Axis::Rs => self.rs,
            Axis::Fip => self.fip,
            Axis::Mn => self.mn,
            Axis::Mtr => self.mtr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Finrs,
    BuyHold,
    Random,
    Macd,
    Rsi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerKind {
    #[default]
    Lexicon,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    #[default]
    Rules,
    Llm,
}

fn default_cash() -> f64 {
    10_000.0
}

fn default_gap() -> i64 {
    7
}

fn default_rsi() -> usize {
    14
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub ticker: String,
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    /// First bar of the calibration window; bars before `start` are used.
    #[serde(default)]
    pub train_start: Option<NaiveDate>,
    #[serde(default = "default_cash")]
    pub initial_cash: f64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub analyzer: AnalyzerKind,
    #[serde(default)]
    pub agents: AgentKind,
    #[serde(default)]
    pub seed: u64,
    /// Largest calendar gap between consecutive bars inside the range.
    #[serde(default = "default_gap")]
    pub max_gap_days: i64,
    #[serde(default = "default_rsi")]
    pub rsi_period: usize,
}

impl RunSection {
    pub fn new(ticker: impl Into<String>) -> Self {
        RunSection {
            ticker: ticker.into(),
            start: None,
            end: None,
            train_start: None,
            initial_cash: default_cash(),
            policy: PolicyKind::default(),
            analyzer: AnalyzerKind::default(),
            agents: AgentKind::default(),
            seed: 0,
            max_gap_days: default_gap(),
            rsi_period: default_rsi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub ohlcv: Option<PathBuf>,
    pub news: Option<PathBuf>,
    pub filings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub tau_shallow: f64,
    pub tau_intermediate: f64,
    pub tau_deep: f64,
    /// Fixed promotion threshold. Calibrated from the training window when absent.
    pub theta_p: Option<f64>,
    pub theta_percentile: f64,
    /// Analyst reports retrieved per decision.
    pub k: usize,
    /// Reflection notes retrieved per decision.
    pub k_reflections: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        let p = MemoryParams::default();
        MemorySection {
            tau_shallow: p.tau_shallow,
            tau_intermediate: p.tau_intermediate,
            tau_deep: p.tau_deep,
            theta_p: None,
            theta_percentile: 0.75,
            k: 5,
            k_reflections: 1,
        }
    }
}

impl MemorySection {
    pub fn params(&self, theta_p: f64) -> MemoryParams {
        MemoryParams {
            tau_shallow: self.tau_shallow,
            tau_intermediate: self.tau_intermediate,
            tau_deep: self.tau_deep,
            theta_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.7,
            api_key_env: "FINRS_API_KEY".into(),
            max_retries: 2,
            backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub execution: ExecutionParams,
    #[serde(default)]
    pub sizing: SizingParams,
    #[serde(default)]
    pub direction: DirectionParams,
    #[serde(default)]
    pub memory: MemorySection,
    #[serde(default)]
    pub reward: RewardParams,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub llm: LlmConfig,
    /// Directory relative data paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn new(run: RunSection) -> Self {
        RunConfig {
            run,
            data: DataSection::default(),
            execution: ExecutionParams::default(),
            sizing: SizingParams::default(),
            direction: DirectionParams::default(),
            memory: MemorySection::default(),
            reward: RewardParams::default(),
            ablation: AblationFlags::default(),
            llm: LlmConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<text>"),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let r = &self.run;
        if r.ticker.trim().is_empty() {
            return bad("run.ticker is empty".into());
        }
        if !(r.initial_cash > 0.0 && r.initial_cash.is_finite()) {
            return bad(format!("run.initial_cash must be positive, got {}", r.initial_cash));
        }
        if let (Some(s), Some(e)) = (r.start, r.end) {
            if s > e {
                return bad(format!("run.start {s} is after run.end {e}"));
            }
        }
        if let (Some(ts), Some(s)) = (r.train_start, r.start) {
            if ts > s {
                return bad(format!("run.train_start {ts} is after run.start {s}"));
            }
        }
        let s = &self.sizing;
        if !(s.kelly_scale > 0.0 && s.kelly_scale <= 1.0) {
            return bad(format!("sizing.kelly_scale must be in (0, 1], got {}", s.kelly_scale));
        }
        if !(s.cvar_alpha > 0.5 && s.cvar_alpha < 1.0) {
            return bad(format!("sizing.cvar_alpha must be in (0.5, 1), got {}", s.cvar_alpha));
        }
        if !(s.cvar_budget > 0.0 && s.cvar_budget <= 1.0) {
            return bad(format!("sizing.cvar_budget must be in (0, 1], got {}", s.cvar_budget));
        }
        if s.lookback == 0 || s.fixed_units < 0 {
            return bad("sizing.lookback must be >= 1 and sizing.fixed_units >= 0".into());
        }
        if self.execution.fee_bps < 0.0 {
            return bad(format!("execution.fee_bps must be >= 0, got {}", self.execution.fee_bps));
        }
        let m = &self.memory;
        if [m.tau_shallow, m.tau_intermediate, m.tau_deep].iter().any(|t| *t <= 0.0) {
            return bad("memory time constants must be positive".into());
        }
        if m.theta_p.is_some_and(|t| t <= 0.0) {
            return bad("memory.theta_p must be positive".into());
        }
        if !(m.theta_percentile > 0.0 && m.theta_percentile <= 1.0) {
            return bad("memory.theta_percentile must be in (0, 1]".into());
        }
        if m.k == 0 {
            return bad("memory.k must be >= 1".into());
        }
        if self.reward.window == 0 {
            return bad("reward.window must be >= 1".into());
        }
        if r.rsi_period == 0 {
            return bad("run.rsi_period must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[run]
ticker = "TSLA"
start = "2025-03-03"
end = "2025-04-30"

[data]
ohlcv = "prices/TSLA.csv"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.run.initial_cash, 10_000.0);
        assert_eq!(c.sizing.kelly_scale, 0.5);
        assert_eq!(c.sizing.cvar_alpha, 0.95);
        assert_eq!(c.reward.window, 30);
        assert_eq!(c.memory.tau_deep, 90.0);
        assert_eq!(c.llm.temperature, 0.7);
        assert_eq!(c.ablation, AblationFlags::default());
    }

    #[test]
    fn bad_ablation_value_is_rejected() {
        let text = format!("{MINIMAL}\n[ablation]\nrs = \"maybe\"\n");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
        let text = format!("{MINIMAL}\n[ablation]\nsentiment = false\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn validation_catches_ranges() {
        let text = MINIMAL.replace("end = \"2025-04-30\"", "end = \"2025-01-01\"");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Invalid(_))));
        let text = format!("{MINIMAL}\n[sizing]\ncvar_alpha = 0.3\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.ablation.mtr = false;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn axes_parse_and_toggle() {
        assert_eq!(Axis::parse("MTR"), Some(Axis::Mtr));
        assert_eq!(Axis::parse("x"), None);
        let f = AblationFlags::default().without(Axis::Fip);
        assert!(!f.fip && f.rs && f.mn && f.mtr);
    }
}
