//! Daily OHLCV series, news and filing feeds, and multi-horizon momentum.
//!
//! Everything here is read-only once loaded. Horizons are counted in trading
//! days (bar indices), never calendar days.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OHLCV_HEADER: [&str; 6] = ["Date", "Open", "High", "Low", "Close", "Volume"];

/// Short, mid and long momentum horizons in trading days.
pub const HORIZONS: [usize; 3] = [1, 7, 30];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: expected header `Date,Open,High,Low,Close,Volume`, found `{found}`", path.display())]
    BadHeader { path: PathBuf, found: String },
    #[error("{}:{line}: {reason}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{}: duplicate date {date}", path.display())]
    DuplicateDate { path: PathBuf, date: NaiveDate },
    #[error("{}: series is empty", path.display())]
    EmptySeries { path: PathBuf },
    #[error("index {t} out of range for series of length {len}")]
    IndexOutOfRange { t: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl Bar {
    /// Checks price positivity and the high/low envelope.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be a positive finite price, got {v}"));
            }
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }

    /// A flat bar where every price equals `close`. Handy for synthetic series.
    pub fn flat(date: NaiveDate, close: f64) -> Self {
        Bar {
            date,
            open: close,
            high: close,
            low: close,
            close,
            volume: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub ticker: String,
    bars: Vec<Bar>,
}

impl PriceSeries {
    /// Sorts by date and rejects duplicates, empty input and invalid bars.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self, DataError> {
        let path = PathBuf::from("<memory>");
        if bars.is_empty() {
            return Err(DataError::EmptySeries { path });
        }
        for (i, bar) in bars.iter().enumerate() {
            bar.validate().map_err(|reason| DataError::MalformedRow {
                path: path.clone(),
                line: i as u64 + 1,
                reason,
            })?;
        }
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(DataError::DuplicateDate {
                path,
                date: w[0].date,
            });
        }
        Ok(PriceSeries {
            ticker: ticker.into(),
            bars,
        })
    }

    /// Builds a series of flat bars on consecutive calendar days from `start`.
    pub fn from_closes(
        ticker: impl Into<String>,
        start: NaiveDate,
        closes: &[f64],
    ) -> Result<Self, DataError> {
        let bars = closes
            .iter()
            .zip(start.iter_days())
            .map(|(&c, d)| Bar::flat(d, c))
            .collect();
        Self::new(ticker, bars)
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn close(&self, t: usize) -> f64 {
        self.bars[t].close
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Sub-series of bars with `start <= date <= end`.
    pub fn slice_dates(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Vec<Bar> {
        self.bars
            .iter()
            .filter(|b| start.is_none_or(|s| b.date >= s) && end.is_none_or(|e| b.date <= e))
            .copied()
            .collect()
    }
}

pub fn load_ohlcv(path: &Path) -> Result<PriceSeries, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ticker = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_uppercase())
        .unwrap_or_default();
    parse_ohlcv(&text, &ticker, path)
}

/// Parses CSV text. `origin` is used only for error messages.
pub fn parse_ohlcv(text: &str, ticker: &str, origin: &Path) -> Result<PriceSeries, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::MalformedRow {
        path: origin.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(OHLCV_HEADER.iter().copied()) {
        return Err(DataError::BadHeader {
            path: origin.to_path_buf(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut bars = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::MalformedRow {
            path: origin.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| DataError::MalformedRow {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date `{}`: {e}", &record[0])))?;
        let price = |i: usize| -> Result<f64, DataError> {
            record[i]
                .parse::<f64>()
                .map_err(|e| malformed(format!("bad {} `{}`: {e}", OHLCV_HEADER[i], &record[i])))
        };
        let volume = record[5]
            .parse::<u64>()
            .map_err(|e| malformed(format!("bad Volume `{}`: {e}", &record[5])))?;
        let bar = Bar {
            date,
            open: price(1)?,
            high: price(2)?,
            low: price(3)?,
            close: price(4)?,
            volume,
        };
        bar.validate().map_err(malformed)?;
        bars.push(bar);
    }

    if bars.is_empty() {
        return Err(DataError::EmptySeries {
            path: origin.to_path_buf(),
        });
    }
    bars.sort_by_key(|b| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(DataError::DuplicateDate {
            path: origin.to_path_buf(),
            date: w[0].date,
        });
    }
    Ok(PriceSeries {
        ticker: ticker.to_string(),
        bars,
    })
}

/// Serializes a series in the same CSV layout `load_ohlcv` reads.
pub fn write_ohlcv(series: &PriceSeries) -> String {
    let mut out = OHLCV_HEADER.join(",");
    out.push('\n');
    for b in &series.bars {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.date.format("%Y-%m-%d"),
            b.open,
            b.high,
            b.low,
            b.close,
            b.volume
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub timestamp: NaiveDateTime,
    /// Empty for macro news.
    pub ticker: String,
    pub headline: String,
    pub body: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilingKind {
    #[serde(rename = "10-Q")]
    TenQ,
    #[serde(rename = "10-K")]
    TenK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilingDoc {
    pub ticker: String,
    pub kind: FilingKind,
    pub period: NaiveDate,
    pub text: String,
}

/// Records from a newline-delimited feed plus the number of skipped lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Feed<T> {
    pub items: Vec<T>,
    pub warnings: usize,
}

#[derive(Deserialize)]
struct RawNews {
    timestamp: String,
    #[serde(default)]
    ticker: String,
    headline: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    source: String,
}

/// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS` or a bare date.
/// Offsets are normalized to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn read_lines(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_news(path: &Path) -> Result<Feed<NewsItem>, DataError> {
    Ok(parse_news(&read_lines(path)?))
}

pub fn parse_news(text: &str) -> Feed<NewsItem> {
    let mut items = Vec::new();
    let mut warnings = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parsed = serde_json::from_str::<RawNews>(line).ok().and_then(|raw| {
            let timestamp = parse_timestamp(&raw.timestamp)?;
            if raw.headline.trim().is_empty() {
                return None;
            }
            Some(NewsItem {
                timestamp,
                ticker: raw.ticker.trim().to_uppercase(),
                headline: raw.headline,
                body: raw.body,
                source: raw.source,
            })
        });
        match parsed {
            Some(item) => items.push(item),
            None => warnings += 1,
        }
    }
    items.sort_by_key(|n| n.timestamp);
    Feed { items, warnings }
}

pub fn load_filings(path: &Path) -> Result<Feed<FilingDoc>, DataError> {
    Ok(parse_filings(&read_lines(path)?))
}

pub fn parse_filings(text: &str) -> Feed<FilingDoc> {
    let mut items = Vec::new();
    let mut warnings = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<FilingDoc>(line) {
            Ok(mut doc) => {
                doc.ticker = doc.ticker.trim().to_uppercase();
                items.push(doc);
            }
            Err(_) => warnings += 1,
        }
    }
    items.sort_by_key(|f| f.period);
    Feed { items, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumFeatures {
    pub d1: f64,
    pub d7: f64,
    pub d30: f64,
    pub horizons_truncated: bool,
}

impl MomentumFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.d1, self.d7, self.d30]
    }
}

/// Forward differences `close[min(t+h, last)] - close[t]` for h in 1, 7, 30.
pub fn momentum(series: &PriceSeries, t: usize) -> Result<MomentumFeatures, DataError> {
    forward_momentum(&series.closes(), t)
}

pub fn forward_momentum(closes: &[f64], t: usize) -> Result<MomentumFeatures, DataError> {
    if t >= closes.len() {
        return Err(DataError::IndexOutOfRange {
            t,
            len: closes.len(),
        });
    }
    let last = closes.len() - 1;
    let mut out = [0.0; 3];
    let mut truncated = false;
    for (slot, h) in out.iter_mut().zip(HORIZONS) {
        let j = t + h;
        truncated |= j > last;
        *slot = closes[j.min(last)] - closes[t];
    }
    Ok(MomentumFeatures {
        d1: out[0],
        d7: out[1],
        d30: out[2],
        horizons_truncated: truncated,
    })
}

/// Backward differences `close[t] - close[t-h]`, clamped at index 0.
///
/// `closes` must end at the decision day; nothing after `t` is read.
pub fn trailing_momentum(closes: &[f64], t: usize) -> Result<MomentumFeatures, DataError> {
    if t >= closes.len() {
        return Err(DataError::IndexOutOfRange {
            t,
            len: closes.len(),
        });
    }
    let mut out = [0.0; 3];
    let mut truncated = false;
    for (slot, h) in out.iter_mut().zip(HORIZONS) {
        truncated |= h > t;
        *slot = closes[t] - closes[t.saturating_sub(h)];
    }
    Ok(MomentumFeatures {
        d1: out[0],
        d7: out[1],
        d30: out[2],
        horizons_truncated: truncated,
    })
}
