//! Multi-horizon momentum score, risk-sensitive reward and reflection.
//!
//! The reward looks FORWARD from day `t`, so it belongs to the evaluation
//! phase: the backtest defers every reflection until the longest horizon has
//! closed, which keeps it out of any decision it could inform.

use serde::{Deserialize, Serialize};

use crate::agent::AgentError;
use crate::market_data::{forward_momentum, DataError};
use crate::memory::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumScore {
    pub m_s: f64,
    pub m_m: f64,
    pub m_l: f64,
    pub total: f64,
    pub truncated: bool,
}

impl MomentumScore {
    pub fn new(m_s: f64, m_m: f64, m_l: f64, truncated: bool) -> Self {
        MomentumScore {
            m_s,
            m_m,
            m_l,
            total: m_s + m_m + m_l,
            truncated,
        }
    }

    /// Single-timescale variant: the total is the 1-day trend alone.
    pub fn short_only(&self) -> Self {
        MomentumScore {
            total: self.m_s,
            ..*self
        }
    }

    /// Every component divided by `price`, making the score dimensionless.
    pub fn normalized(&self, price: f64) -> Self {
        MomentumScore {
            m_s: self.m_s / price,
            m_m: self.m_m / price,
            m_l: self.m_l / price,
            total: self.total / price,
            truncated: self.truncated,
        }
    }
}

/// Sum of the clamped forward 1, 7 and 30 day price differences at `t`.
pub fn momentum_score(closes: &[f64], t: usize) -> Result<MomentumScore, DataError> {
    let f = forward_momentum(closes, t)?;
    Ok(MomentumScore::new(f.d1, f.d7, f.d30, f.horizons_truncated))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCase {
    InertiaPenalty,
    PositionScaled,
}

impl RewardCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardCase::InertiaPenalty => "inertia_penalty",
            RewardCase::PositionScaled => "position_scaled",
        }
    }
}

/// What multiplies the momentum total when the position changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionScale {
    /// The post-trade position.
    #[default]
    Position,
    /// The signed trade size `position_after - position_before`.
    TradeDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub window: usize,
    pub normalize_by_price: bool,
    pub action_scale: ActionScale,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            window: 30,
            normalize_by_price: false,
            action_scale: ActionScale::Position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub t: usize,
    pub reward: f64,
    pub position_before: i64,
    pub position_after: i64,
    pub momentum: MomentumScore,
    pub benchmark_pnl: f64,
    pub case: RewardCase,
}

/// `-(total)^2` when the position is unchanged, otherwise the position
/// (or trade delta) times `total`.
pub fn reward_value(
    position_before: i64,
    position_after: i64,
    score: &MomentumScore,
    scale: ActionScale,
) -> (f64, RewardCase) {
    if position_after == position_before {
        // `+ 0.0` folds negative zero so traces never print `-0`.
        return (-(score.total * score.total) + 0.0, RewardCase::InertiaPenalty);
    }
    let multiplier = match scale {
        ActionScale::Position => position_after,
        ActionScale::TradeDelta => position_after - position_before,
    };
    (multiplier as f64 * score.total + 0.0, RewardCase::PositionScaled)
}

pub fn reward(
    t: usize,
    position_before: i64,
    position_after: i64,
    score: MomentumScore,
    benchmark_pnl: f64,
    scale: ActionScale,
) -> RewardRecord {
    let (value, case) = reward_value(position_before, position_after, &score, scale);
    RewardRecord {
        t,
        reward: value,
        position_before,
        position_after,
        momentum: score,
        benchmark_pnl,
        case,
    }
}

/// `equity[t] - equity[max(0, t - window)]`.
pub fn benchmark_pnl(equity: &[f64], t: usize, window: usize) -> f64 {
    equity[t] - equity[t.saturating_sub(window)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionNote {
    /// Trading day the reflected decision was made.
    pub date: usize,
    pub text: String,
    pub linked_memory_ids: Vec<u64>,
}

pub trait Reflector {
    fn reflect(&mut self, record: &RewardRecord) -> Result<String, AgentError>;
}

/// Fixed-format note comparing the action's reward with the equity benchmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateReflector;

pub fn describe(record: &RewardRecord) -> String {
    let delta = record.position_after - record.position_before;
    let action = match delta.signum() {
        1 => format!("bought {delta}"),
        -1 => format!("sold {}", -delta),
        _ => "held".to_string(),
    };
    let verdict = if record.reward > 0.0 {
        "action aligned with the forward trend"
    } else if record.case == RewardCase::InertiaPenalty && record.reward < 0.0 {
        "passivity penalized during a move"
    } else if record.reward < 0.0 {
        "action went against the forward trend"
    } else {
        "neutral outcome"
    };
    format!(
        "day {}: {action}, position {} -> {}; momentum {:.4} (s {:.4}, m {:.4}, l {:.4}); reward {:.4} [{}]; window pnl {:.2}; {verdict}",
        record.t,
        record.position_before,
        record.position_after,
        record.momentum.total,
        record.momentum.m_s,
        record.momentum.m_m,
        record.momentum.m_l,
        record.reward,
        record.case.as_str(),
        record.benchmark_pnl,
    )
}

impl Reflector for TemplateReflector {
    fn reflect(&mut self, record: &RewardRecord) -> Result<String, AgentError> {
        Ok(describe(record))
    }
}

/// Splits the reward equally over the contributing records and stores the
/// note in shallow memory at `today`. Ids evicted in the meantime are skipped.
pub fn reflect(
    memory: &mut MemoryStore,
    ticker: &str,
    record: &RewardRecord,
    contributing_ids: &[u64],
    text: String,
    today: usize,
) -> ReflectionNote {
    if !contributing_ids.is_empty() {
        let share = record.reward / contributing_ids.len() as f64;
        for &id in contributing_ids {
            let _ = memory.reinforce(id, share);
        }
    }
    let note = ReflectionNote {
        date: record.t,
        text,
        linked_memory_ids: contributing_ids.to_vec(),
    };
    memory.insert_note(ticker, note.clone(), today);
    note
}

pub const REWARD_CSV_HEADER: &str =
    "t,position_before,position_after,m_s,m_m,m_l,total,reward,case,benchmark_pnl";

pub fn rewards_csv(records: &[RewardRecord]) -> String {
    let mut out = String::from(REWARD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.position_before,
            r.position_after,
            r.momentum.m_s,
            r.momentum.m_m,
            r.momentum.m_l,
            r.momentum.total,
            r.reward,
            r.case.as_str(),
            r.benchmark_pnl
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Layer, MemoryParams};
    use crate::perception::{AnalystReport, RiskCue, SourceKind, StabilityClass};
    use proptest::prelude::*;

    fn closes(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn score_on_ramp() {
        let s = momentum_score(&closes(41), 5).unwrap();
        assert_eq!(s.total, 38.0);
        assert!(!s.truncated);
        assert_eq!(momentum_score(&[42.0; 50], 10).unwrap().total, 0.0);
    }

    #[test]
    fn score_clamps_at_end() {
        let s = momentum_score(&closes(10), 5).unwrap();
        assert_eq!(s.total, 9.0);
        assert!(s.truncated);
        assert!(momentum_score(&closes(10), 10).is_err());
    }

    fn score(total: f64) -> MomentumScore {
        MomentumScore::new(total, 0.0, 0.0, false)
    }

    #[test]
    fn inertia_penalty_and_position_scaled() {
        assert_eq!(reward_value(4, 4, &score(3.0), ActionScale::Position), (-9.0, RewardCase::InertiaPenalty));
        assert_eq!(reward_value(5, 8, &score(2.0), ActionScale::Position), (16.0, RewardCase::PositionScaled));
        assert_eq!(reward_value(5, 8, &score(2.0), ActionScale::TradeDelta).0, 6.0);
        assert_eq!(reward_value(2, 2, &score(0.0), ActionScale::Position).0, 0.0);
    }

    #[test]
    fn short_only_and_normalized() {
        let s = MomentumScore::new(1.0, 2.0, 4.0, false);
        assert_eq!(s.short_only().total, 1.0);
        assert_eq!(s.normalized(2.0).total, 3.5);
    }

    #[test]
    fn benchmark_window() {
        let flat = vec![100.0; 50];
        assert!((0..50).all(|t| benchmark_pnl(&flat, t, 30) == 0.0));
        let lin: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        assert_eq!(benchmark_pnl(&lin, 40, 30), 30.0);
        assert_eq!(benchmark_pnl(&lin, 12, 30), 12.0);
    }

    fn news(id: &str) -> AnalystReport {
        AnalystReport {
            signal_ref: id.into(),
            ticker: "TSLA".into(),
            source_kind: SourceKind::News,
            summary: String::new(),
            sentiment: 0.0,
            risk_cues: vec![RiskCue::None],
            stability_class: StabilityClass::Volatile,
            degraded: false,
        }
    }

    #[test]
    fn reflect_splits_reward_equally() {
        let mut m = MemoryStore::new(MemoryParams { theta_p: 100.0, ..Default::default() });
        let ids: Vec<u64> = (0..3).map(|i| m.insert(news(&format!("n{i}")), 0).id).collect();
        let rec = reward(0, 0, 6, score(2.0), 0.0, ActionScale::Position);
        let note = reflect(&mut m, "TSLA", &rec, &ids, describe(&rec), 1);
        for id in &ids {
            assert_eq!(m.get(*id).unwrap().attributed_reward, 4.0);
        }
        assert_eq!(note.linked_memory_ids, ids);
        let stored = m.records().last().unwrap();
        assert_eq!(stored.layer, Layer::Shallow);
        assert_eq!(stored.created_at, 1);
    }

    #[test]
    fn reflect_without_contributors_still_notes() {
        let mut m = MemoryStore::new(MemoryParams::default());
        let rec = reward(3, 1, 1, score(3.0), 0.0, ActionScale::Position);
        let note = reflect(&mut m, "TSLA", &rec, &[], describe(&rec), 3);
        assert!(note.text.contains("held"));
        assert_eq!(m.len(), 1);

        let id = m.insert(news("x"), 3).id;
        reflect(&mut m, "TSLA", &rec, &[id], describe(&rec), 3);
        assert_eq!(m.get(id).unwrap().attributed_reward, -9.0);
    }

    #[test]
    fn reward_csv_header_and_row() {
        let rec = reward(0, 0, 2, MomentumScore::new(1.0, 2.0, 3.0, false), 5.5, ActionScale::Position);
        let csv = rewards_csv(&[rec]);
        assert_eq!(csv, format!("{REWARD_CSV_HEADER}\n0,0,2,1,2,3,6,12,position_scaled,5.5\n"));
    }

    proptest! {
        #[test]
        fn inertia_never_positive(total in -1e3f64..1e3, p in 0i64..1000) {
            let (r, case) = reward_value(p, p, &score(total), ActionScale::Position);
            prop_assert_eq!(case, RewardCase::InertiaPenalty);
            prop_assert!(r <= 0.0);
            prop_assert_eq!(r == 0.0, total == 0.0);
        }

        #[test]
        fn action_sign_matches(total in -1e3f64..1e3, a in 0i64..1000, b in 0i64..1000) {
            prop_assume!(a != b);
            let (r, _) = reward_value(a, b, &score(total), ActionScale::Position);
            let expected = (b as f64 * total).signum();
            if b == 0 || total == 0.0 { prop_assert_eq!(r, 0.0); } else { prop_assert_eq!(r.signum(), expected); }
        }
    }
}
