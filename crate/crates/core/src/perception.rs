//! Signal pre-screening and analyst reports.
//!
//! Raw news, filings and macro items pass a relevance filter that records why
//! each one was kept, then an [`Analyzer`] turns survivors into reports with
//! sentiment and explicit risk cues.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::config::AblationFlags;
use crate::market_data::{FilingDoc, NewsItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    News,
    Filing,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub source_kind: SourceKind,
    pub ticker: String,
    pub timestamp: NaiveDateTime,
    pub text: String,
    pub origin_id: String,
}

impl Signal {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }

    /// News with an empty ticker is treated as macro.
    pub fn from_news(item: &NewsItem, index: usize) -> Self {
        let kind = if item.ticker.is_empty() {
            SourceKind::Macro
        } else {
            SourceKind::News
        };
        let text = if item.body.is_empty() {
            item.headline.clone()
        } else {
            format!("{} {}", item.headline, item.body)
        };
        Signal {
            source_kind: kind,
            ticker: item.ticker.clone(),
            timestamp: item.timestamp,
            text,
            origin_id: format!("news-{index:05}"),
        }
    }

    /// A filing becomes visible at the start of its period date.
    pub fn from_filing(doc: &FilingDoc, index: usize) -> Self {
        Signal {
            source_kind: SourceKind::Filing,
            ticker: doc.ticker.clone(),
            timestamp: doc.period.and_hms_opt(0, 0, 0).expect("midnight is valid"),
            text: doc.text.clone(),
            origin_id: format!("filing-{index:05}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lexicon {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub downside: Vec<String>,
    pub volatility: Vec<String>,
    #[serde(rename = "macro")]
    pub macro_keywords: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            positive: words(&[
                "beat", "beats", "growth", "surge", "surges", "record", "upgrade", "profit",
                "profitable", "strong", "gain", "gains", "rally", "outperform", "bullish",
                "expansion", "exceeded", "raised", "optimism",
            ]),
            negative: words(&[
                "miss", "misses", "decline", "declines", "loss", "losses", "downgrade", "weak",
                "plunge", "plunges", "lawsuit", "recall", "bearish", "slump", "fell", "drop",
                "warning", "probe",
            ]),
            downside: words(&[
                "drawdown", "default", "bankruptcy", "recession", "lawsuit", "recall",
                "impairment", "writedown", "layoffs", "selloff", "crash", "downgrade",
            ]),
            volatility: words(&[
                "volatile", "volatility", "uncertainty", "turbulence", "swings", "shock",
                "tariff", "tariffs", "election",
            ]),
            macro_keywords: words(&[
                "fed", "inflation", "rates", "tariff", "tariffs", "election", "gdp",
                "unemployment", "recession", "cpi", "treasury", "geopolitical",
            ]),
        }
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid lexicon {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

impl Lexicon {
    /// Loads a TOML file of `key = [words]`. Missing keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| LexiconError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lexicon serializes")
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn count_hits(tokens: &[String], list: &[String]) -> usize {
    tokens.iter().filter(|t| list.contains(t)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub include: bool,
    pub relevance: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("signal {origin_id} dated {signal_date} seen on decision date {date}")]
    Lookahead {
        origin_id: String,
        signal_date: NaiveDate,
        date: NaiveDate,
    },
}

/// Keeps a signal when it names the traded ticker, or when it is macro news
/// mentioning a configured macro keyword.
///
/// Relevance is 1 for a ticker match, otherwise the fraction of the macro
/// keyword list found in the text.
pub fn filter(
    signal: &Signal,
    ticker: &str,
    date: NaiveDate,
    lexicon: &Lexicon,
) -> Result<FilterVerdict, PerceptionError> {
    if signal.date() > date {
        return Err(PerceptionError::Lookahead {
            origin_id: signal.origin_id.clone(),
            signal_date: signal.date(),
            date,
        });
    }
    if !ticker.is_empty() && signal.ticker.eq_ignore_ascii_case(ticker) {
        return Ok(FilterVerdict {
            include: true,
            relevance: 1.0,
            reason: format!("ticker match: {}", ticker.to_uppercase()),
        });
    }
    if signal.source_kind == SourceKind::Macro {
        let tokens: BTreeSet<String> = tokenize(&signal.text).into_iter().collect();
        let distinct: BTreeSet<&String> = lexicon.macro_keywords.iter().collect();
        let matched: Vec<&str> = distinct
            .iter()
            .filter(|k| tokens.contains(k.as_str()))
            .map(|k| k.as_str())
            .collect();
        if !matched.is_empty() {
            return Ok(FilterVerdict {
                include: true,
                relevance: matched.len() as f64 / distinct.len() as f64,
                reason: format!("macro keywords: {}", matched.join(", ")),
            });
        }
    }
    Ok(FilterVerdict {
        include: false,
        relevance: 0.0,
        reason: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskCue {
    DownsideIndicator,
    VolatilitySignal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Stable,
    Volatile,
}

impl StabilityClass {
    pub fn of(kind: SourceKind) -> Self {
        match kind {
            SourceKind::Filing => StabilityClass::Stable,
            SourceKind::News | SourceKind::Macro => StabilityClass::Volatile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalystReport {
    pub signal_ref: String,
    pub ticker: String,
    pub source_kind: SourceKind,
    pub summary: String,
    pub sentiment: f64,
    pub risk_cues: Vec<RiskCue>,
    pub stability_class: StabilityClass,
    /// Set when the analyzer failed and the report is a neutral placeholder.
    #[serde(default)]
    pub degraded: bool,
}

impl AnalystReport {
    pub fn has_cue(&self, cue: RiskCue) -> bool {
        self.risk_cues.contains(&cue)
    }

    fn neutral(signal: &Signal, why: &str) -> Self {
        AnalystReport {
            signal_ref: signal.origin_id.clone(),
            ticker: signal.ticker.clone(),
            source_kind: signal.source_kind,
            summary: format!("[degraded] {why}"),
            sentiment: 0.0,
            risk_cues: vec![RiskCue::None],
            stability_class: StabilityClass::of(signal.source_kind),
            degraded: true,
        }
    }
}

pub trait Analyzer {
    fn analyze(&mut self, signal: &Signal, ablation: &AblationFlags)
        -> Result<AnalystReport, AgentError>;
}

/// Runs an analyzer, replacing a degraded failure with a neutral report.
/// Only fatal errors propagate.
pub fn analyze(
    analyzer: &mut dyn Analyzer,
    signal: &Signal,
    ablation: &AblationFlags,
) -> Result<AnalystReport, AgentError> {
    match analyzer.analyze(signal, ablation) {
        Ok(mut report) => {
            report.sentiment = report.sentiment.clamp(-1.0, 1.0);
            if report.risk_cues.is_empty() {
                report.risk_cues.push(RiskCue::None);
            }
            Ok(report)
        }
        Err(AgentError::Degraded(why)) => Ok(AnalystReport::neutral(signal, &why)),
        Err(e) => Err(e),
    }
}

const SUMMARY_CHARS: usize = 160;

pub fn summarize(text: &str) -> String {
    let text = text.trim();
    match text.char_indices().nth(SUMMARY_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

/// Deterministic word-list analyzer.
#[derive(Debug, Clone, Default)]
pub struct LexiconAnalyzer {
    pub lexicon: Lexicon,
}

impl LexiconAnalyzer {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconAnalyzer { lexicon }
    }

    pub fn report(&self, signal: &Signal) -> AnalystReport {
        let tokens = tokenize(&signal.text);
        let pos = count_hits(&tokens, &self.lexicon.positive) as f64;
        let neg = count_hits(&tokens, &self.lexicon.negative) as f64;
        let sentiment = (pos - neg) / (pos + neg).max(1.0);
        let mut risk_cues = Vec::new();
        if count_hits(&tokens, &self.lexicon.downside) > 0 {
            risk_cues.push(RiskCue::DownsideIndicator);
        }
        if count_hits(&tokens, &self.lexicon.volatility) > 0 {
            risk_cues.push(RiskCue::VolatilitySignal);
        }
        if risk_cues.is_empty() {
            risk_cues.push(RiskCue::None);
        }
        AnalystReport {
            signal_ref: signal.origin_id.clone(),
            ticker: signal.ticker.clone(),
            source_kind: signal.source_kind,
            summary: summarize(&signal.text),
            sentiment,
            risk_cues,
            stability_class: StabilityClass::of(signal.source_kind),
            degraded: false,
        }
    }
}

impl Analyzer for LexiconAnalyzer {
    fn analyze(&mut self, signal: &Signal, _: &AblationFlags) -> Result<AnalystReport, AgentError> {
        Ok(self.report(signal))
    }
}

/// Canonical processing order for same-day signals.
pub fn sort_signals(signals: &mut [Signal]) {
    signals.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.origin_id.cmp(&b.origin_id))
    });
}
