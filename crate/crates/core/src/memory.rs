//! Layered memory of analyst reports and reflection notes.
//!
//! Stable evidence starts deep, volatile evidence starts shallow. Each layer
//! decays with its own time constant, and attributed rewards promote records
//! deeper or weaken them until they are evicted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{AnalystReport, RiskCue, StabilityClass};
use crate::reward::ReflectionNote;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Shallow,
    Intermediate,
    Deep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MemoryContent {
    Report(AnalystReport),
    Reflection(ReflectionNote),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub layer: Layer,
    /// Empty for macro evidence, which is visible to every ticker.
    pub ticker: String,
    pub content: MemoryContent,
    pub created_at: usize,
    pub last_access: usize,
    pub importance: f64,
    pub attributed_reward: f64,
    /// `attributed_reward` at the last promotion or weakening.
    pub adjusted_at_reward: f64,
}

impl MemoryRecord {
    pub fn report(&self) -> Option<&AnalystReport> {
        match &self.content {
            MemoryContent::Report(r) => Some(r),
            MemoryContent::Reflection(_) => None,
        }
    }

    pub fn is_evictable(&self) -> bool {
        self.importance <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryParams {
    pub tau_shallow: f64,
    pub tau_intermediate: f64,
    pub tau_deep: f64,
    /// Promotion/weakening threshold in reward units.
    pub theta_p: f64,
}

impl Default for MemoryParams {
    fn default() -> Self {
        MemoryParams {
            tau_shallow: 3.0,
            tau_intermediate: 14.0,
            tau_deep: 90.0,
            theta_p: 1.0,
        }
    }
}

impl MemoryParams {
    pub fn tau(&self, layer: Layer) -> f64 {
        match layer {
            Layer::Shallow => self.tau_shallow,
            Layer::Intermediate => self.tau_intermediate,
            Layer::Deep => self.tau_deep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ContentFilter {
    #[default]
    Any,
    Reports,
    Reflections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub ticker: String,
    pub date: usize,
    pub k: usize,
    /// When non-empty, only reports carrying at least one of these cues.
    pub tags: Vec<RiskCue>,
    pub content: ContentFilter,
}

impl RetrievalQuery {
    pub fn new(ticker: impl Into<String>, date: usize, k: usize) -> Self {
        RetrievalQuery {
            ticker: ticker.into(),
            date,
            k: k.max(1),
            tags: Vec::new(),
            content: ContentFilter::Any,
        }
    }

    pub fn content(mut self, content: ContentFilter) -> Self {
        self.content = content;
        self
    }

    pub fn tags(mut self, tags: Vec<RiskCue>) -> Self {
        self.tags = tags;
        self
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown memory record {0}")]
    UnknownRecord(u64),
    #[error("memory dump line {line}: {source}")]
    BadDump {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    params: MemoryParams,
    records: Vec<MemoryRecord>,
    next_id: u64,
    current_date: Option<usize>,
}

impl MemoryStore {
    pub fn new(params: MemoryParams) -> Self {
        MemoryStore {
            params,
            records: Vec::new(),
            next_id: 1,
            current_date: None,
        }
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn push(&mut self, ticker: String, layer: Layer, content: MemoryContent, date: usize) -> MemoryRecord {
        let record = MemoryRecord {
            id: self.next_id,
            layer,
            ticker,
            content,
            created_at: date,
            last_access: date,
            importance: 1.0,
            attributed_reward: 0.0,
            adjusted_at_reward: 0.0,
        };
        self.next_id += 1;
        self.records.push(record.clone());
        record
    }

    /// Stable reports start in the deep layer, everything else shallow.
    pub fn insert(&mut self, report: AnalystReport, date: usize) -> MemoryRecord {
        let layer = match report.stability_class {
            StabilityClass::Stable => Layer::Deep,
            StabilityClass::Volatile => Layer::Shallow,
        };
        self.push(report.ticker.clone(), layer, MemoryContent::Report(report), date)
    }

    pub fn insert_note(&mut self, ticker: &str, note: ReflectionNote, date: usize) -> MemoryRecord {
        self.push(ticker.to_string(), Layer::Shallow, MemoryContent::Reflection(note), date)
    }

    pub fn score(&self, record: &MemoryRecord, date: usize) -> f64 {
        let age = date.saturating_sub(record.last_access) as f64;
        record.importance * (-age / self.params.tau(record.layer)).exp()
    }

    fn matches(&self, r: &MemoryRecord, q: &RetrievalQuery) -> bool {
        if r.is_evictable() || r.created_at > q.date {
            return false;
        }
        if !(r.ticker.is_empty() || r.ticker.eq_ignore_ascii_case(&q.ticker)) {
            return false;
        }
        match (&r.content, q.content) {
            (MemoryContent::Report(_), ContentFilter::Reflections) => return false,
            (MemoryContent::Reflection(_), ContentFilter::Reports) => return false,
            _ => {}
        }
        if q.tags.is_empty() {
            return true;
        }
        r.report()
            .is_some_and(|rep| q.tags.iter().any(|t| rep.has_cue(*t)))
    }

    /// Top-k live records by decayed importance. Retrieved records are touched.
    pub fn retrieve(&mut self, query: &RetrievalQuery) -> Vec<MemoryRecord> {
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.matches(r, query))
            .map(|(i, r)| (self.score(r, query.date), i))
            .collect();
        scored.sort_by(|a, b| {
            let (ra, rb) = (&self.records[a.1], &self.records[b.1]);
            b.0.total_cmp(&a.0)
                .then_with(|| rb.created_at.cmp(&ra.created_at))
                .then_with(|| ra.id.cmp(&rb.id))
        });
        scored
            .into_iter()
            .take(query.k.max(1))
            .map(|(_, i)| {
                let r = &mut self.records[i];
                r.last_access = r.last_access.max(query.date);
                r.clone()
            })
            .collect()
    }

    /// Adds a signed reward share and applies promotion, weakening and eviction.
    pub fn reinforce(&mut self, id: u64, reward_share: f64) -> Result<MemoryRecord, MemoryError> {
        let theta = self.params.theta_p;
        let r = self
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or(MemoryError::UnknownRecord(id))?;
        if reward_share == 0.0 {
            return Ok(r.clone());
        }
        r.attributed_reward += reward_share;
        let total = r.attributed_reward;

        let before = r.layer;
        if r.layer == Layer::Shallow && total >= theta {
            r.layer = Layer::Intermediate;
        }
        if r.layer == Layer::Intermediate && total >= 2.0 * theta {
            r.layer = Layer::Deep;
        }
        if r.layer != before {
            r.adjusted_at_reward = total;
        }

        if total - r.adjusted_at_reward < -theta {
            r.importance *= 0.5;
            r.adjusted_at_reward = total;
        }
        if total <= -2.0 * theta {
            r.importance = 0.0;
        }
        Ok(r.clone())
    }

    /// Advances the bookkeeping date and sweeps evictable records.
    /// Returns the number of records removed.
    pub fn decay_step(&mut self, date: usize) -> usize {
        if self.current_date == Some(date) {
            return 0;
        }
        self.current_date = Some(date);
        let before = self.records.len();
        self.records.retain(|r| !r.is_evictable());
        before - self.records.len()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(params: MemoryParams, text: &str) -> Result<Self, MemoryError> {
        let mut store = MemoryStore::new(params);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: MemoryRecord = serde_json::from_str(line)
                .map_err(|source| MemoryError::BadDump { line: i + 1, source })?;
            store.next_id = store.next_id.max(record.id + 1);
            store.records.push(record);
        }
        Ok(store)
    }
}

/// Nearest-rank percentile of absolute values; `q` in (0, 1].
pub fn abs_percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = (q * abs.len() as f64).ceil().max(1.0) as usize;
    Some(abs[rank.min(abs.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::SourceKind;

    fn report(kind: SourceKind, id: &str) -> AnalystReport {
        AnalystReport {
            signal_ref: id.into(),
            ticker: "TSLA".into(),
            source_kind: kind,
            summary: id.into(),
            sentiment: 0.5,
            risk_cues: vec![RiskCue::None],
            stability_class: StabilityClass::of(kind),
            degraded: false,
        }
    }

    fn store() -> MemoryStore {
        MemoryStore::new(MemoryParams {
            theta_p: 10.0,
            ..MemoryParams::default()
        })
    }

    #[test]
    fn initial_layer_follows_stability() {
        let mut m = store();
        let a = m.insert(report(SourceKind::Filing, "f"), 0);
        let b = m.insert(report(SourceKind::News, "n"), 0);
        assert_eq!(a.layer, Layer::Deep);
        assert_eq!(b.layer, Layer::Shallow);
        assert_ne!(a.id, b.id);
        assert_eq!((b.importance, b.attributed_reward), (1.0, 0.0));
    }

    #[test]
    fn fresher_record_ranks_first() {
        let mut m = store();
        let old = m.insert(report(SourceKind::News, "old"), 0);
        let new = m.insert(report(SourceKind::News, "new"), 10);
        let got = m.retrieve(&RetrievalQuery::new("TSLA", 10, 2));
        assert_eq!(got.iter().map(|r| r.id).collect::<Vec<_>>(), vec![new.id, old.id]);
        assert_eq!(m.get(old.id).unwrap().last_access, 10);
    }

    #[test]
    fn k_caps_results() {
        let mut m = store();
        for i in 0..5 {
            m.insert(report(SourceKind::News, &format!("n{i}")), i);
        }
        assert_eq!(m.retrieve(&RetrievalQuery::new("TSLA", 5, 1)).len(), 1);
    }

    #[test]
    fn ties_prefer_newer_then_lower_id() {
        let mut m = store();
        let a = m.insert(report(SourceKind::News, "a"), 3);
        let b = m.insert(report(SourceKind::News, "b"), 3);
        let got = m.retrieve(&RetrievalQuery::new("TSLA", 3, 2));
        assert_eq!(got[0].id, a.id);
        assert_eq!(got[1].id, b.id);
    }

    #[test]
    fn zero_importance_is_never_returned() {
        let mut m = store();
        let r = m.insert(report(SourceKind::News, "n"), 0);
        m.reinforce(r.id, -20.0).unwrap();
        assert_eq!(m.get(r.id).unwrap().importance, 0.0);
        assert!(m.retrieve(&RetrievalQuery::new("TSLA", 1, 5)).is_empty());
    }

    #[test]
    fn promotion_thresholds() {
        let mut m = store();
        let r = m.insert(report(SourceKind::News, "n"), 0);
        assert_eq!(m.reinforce(r.id, 10.0).unwrap().layer, Layer::Intermediate);
        assert_eq!(m.reinforce(r.id, 9.0).unwrap().layer, Layer::Intermediate);
        assert_eq!(m.reinforce(r.id, 1.0).unwrap().layer, Layer::Deep);
        // Losses never demote.
        let after = m.reinforce(r.id, -15.0).unwrap();
        assert_eq!(after.layer, Layer::Deep);
        assert_eq!(after.importance, 0.5);
    }

    #[test]
    fn single_large_share_promotes_twice() {
        let mut m = store();
        let r = m.insert(report(SourceKind::News, "n"), 0);
        assert_eq!(m.reinforce(r.id, 25.0).unwrap().layer, Layer::Deep);
    }

    #[test]
    fn weakening_then_eviction() {
        let mut m = store();
        let r = m.insert(report(SourceKind::News, "n"), 0);
        assert_eq!(m.reinforce(r.id, -10.0).unwrap().importance, 1.0);
        assert_eq!(m.reinforce(r.id, -0.5).unwrap().importance, 0.5);
        assert_eq!(m.reinforce(r.id, -9.5).unwrap().importance, 0.0);
        assert_eq!(m.decay_step(1), 1);
        assert!(m.is_empty());
    }

    #[test]
    fn zero_share_is_identity() {
        let mut m = store();
        let r = m.insert(report(SourceKind::News, "n"), 0);
        assert_eq!(m.reinforce(r.id, 0.0).unwrap(), r);
        assert!(matches!(m.reinforce(99, 1.0), Err(MemoryError::UnknownRecord(99))));
    }

    #[test]
    fn decay_step_is_idempotent() {
        let mut m = store();
        m.insert(report(SourceKind::News, "a"), 0);
        let snapshot = m.clone();
        assert_eq!(m.decay_step(1), 0);
        assert_eq!(m.records(), snapshot.records());
        let r = m.insert(report(SourceKind::News, "b"), 1);
        m.reinforce(r.id, -25.0).unwrap();
        // Same date: no sweep.
        assert_eq!(m.decay_step(1), 0);
        assert_eq!(m.decay_step(2), 1);
        assert_eq!(m.decay_step(2), 0);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn tag_and_content_filters() {
        let mut m = store();
        let mut risky = report(SourceKind::News, "risky");
        risky.risk_cues = vec![RiskCue::VolatilitySignal];
        let risky = m.insert(risky, 0);
        m.insert(report(SourceKind::News, "calm"), 0);
        let mut other = report(SourceKind::News, "other");
        other.ticker = "AAPL".into();
        m.insert(other, 0);
        let got = m.retrieve(&RetrievalQuery::new("TSLA", 0, 5).tags(vec![RiskCue::VolatilitySignal]));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, risky.id);
        assert_eq!(m.retrieve(&RetrievalQuery::new("TSLA", 0, 5)).len(), 2);
        assert!(m
            .retrieve(&RetrievalQuery::new("TSLA", 0, 5).content(ContentFilter::Reflections))
            .is_empty());
    }

    #[test]
    fn dump_restore_round_trip() {
        let mut m = store();
        let r = m.insert(report(SourceKind::Filing, "f"), 0);
        m.insert(report(SourceKind::News, "n"), 2);
        m.reinforce(r.id, 3.25).unwrap();
        let text = m.to_jsonl();
        let back = MemoryStore::from_jsonl(*m.params(), &text).unwrap();
        assert_eq!(back.records(), m.records());
        assert_eq!(back.to_jsonl(), text);
        let mut back = back;
        assert_eq!(back.insert(report(SourceKind::News, "x"), 3).id, 3);
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(abs_percentile(&[-4.0, 1.0, 2.0, 3.0], 0.75), Some(3.0));
        assert_eq!(abs_percentile(&[5.0], 0.75), Some(5.0));
        assert_eq!(abs_percentile(&[], 0.75), None);
    }
}
