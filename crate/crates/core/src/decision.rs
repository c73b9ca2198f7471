//! Direction and sizing agents, risk estimators and baseline policies.
//!
//! A [`Policy`] sees only a [`PolicyContext`], whose [`MarketView`] stops at
//! the decision day. The dual-agent policy asks a [`DirectionAgent`] for
//! buy/sell/hold and then a [`SizingAgent`] for win probability and payoff,
//! which feed scaled Kelly sizing under a CVaR budget.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::audit::{AccessAudit, Phase};
use crate::config::AblationFlags;
use crate::market_data::MomentumFeatures;
use crate::memory::MemoryRecord;
use crate::portfolio::AccountState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Buy,
    Sell,
    Hold,
}

impl Direction {
    pub fn sign(&self) -> i64 {
        match self {
            Direction::Buy => 1,
            Direction::Sell => -1,
            Direction::Hold => 0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Buy => "buy",
            Direction::Sell => "sell",
            Direction::Hold => "hold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" => Some(Direction::Buy),
            "sell" => Some(Direction::Sell),
            "hold" => Some(Direction::Hold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeDecision {
    pub direction: Direction,
    pub quantity: i64,
    pub rationale: String,
    pub contributing_memory_ids: Vec<u64>,
}

impl TradeDecision {
    /// A non-positive quantity turns the decision into a hold.
    pub fn new(direction: Direction, quantity: i64, rationale: impl Into<String>) -> Self {
        let (direction, quantity) = if direction == Direction::Hold || quantity <= 0 {
            (Direction::Hold, 0)
        } else {
            (direction, quantity)
        };
        TradeDecision {
            direction,
            quantity,
            rationale: rationale.into(),
            contributing_memory_ids: Vec::new(),
        }
    }

    pub fn hold(rationale: impl Into<String>) -> Self {
        Self::new(Direction::Hold, 0, rationale)
    }

    pub fn with_memories(mut self, ids: Vec<u64>) -> Self {
        self.contributing_memory_ids = ids;
        self
    }
}

/// Read access to closes up to and including the decision day.
#[derive(Debug, Clone, Copy)]
pub struct MarketView<'a> {
    closes: &'a [f64],
    t: usize,
    audit: Option<&'a AccessAudit>,
}

impl<'a> MarketView<'a> {
    /// `closes` may extend past `t`; nothing beyond `t` is ever returned.
    pub fn new(closes: &'a [f64], t: usize) -> Self {
        assert!(t < closes.len(), "decision day {t} outside series");
        MarketView {
            closes,
            t,
            audit: None,
        }
    }

    pub fn audited(mut self, audit: &'a AccessAudit) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn t(&self) -> usize {
        self.t
    }

    fn touch(&self, index: usize) {
        if let Some(a) = self.audit {
            a.record(Phase::Decision, self.t, index);
        }
    }

    /// `None` for any index after the decision day. The attempt is still logged.
    pub fn close(&self, index: usize) -> Option<f64> {
        self.touch(index);
        (index <= self.t).then(|| self.closes[index])
    }

    pub fn price(&self) -> f64 {
        self.touch(self.t);
        self.closes[self.t]
    }

    /// Closes `0..=t`.
    pub fn history(&self) -> &'a [f64] {
        self.touch(self.t);
        &self.closes[..=self.t]
    }

    /// Up to `lookback` simple daily returns ending at `t`.
    pub fn returns(&self, lookback: usize) -> Vec<f64> {
        let h = self.history();
        let start = h.len().saturating_sub(lookback + 1);
        h[start..].windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }
}

pub struct PolicyContext<'a> {
    pub ticker: &'a str,
    pub t: usize,
    pub date: NaiveDate,
    /// Backward differences `close[t] - close[t-h]`.
    pub momentum: MomentumFeatures,
    pub retrieved: &'a [MemoryRecord],
    pub account: AccountState,
    pub price: f64,
    pub ablation: AblationFlags,
    pub view: MarketView<'a>,
}

impl PolicyContext<'_> {
    pub fn equity(&self) -> f64 {
        self.account.equity_at(self.price)
    }

    pub fn memory_ids(&self) -> Vec<u64> {
        self.retrieved.iter().map(|r| r.id).collect()
    }

    /// Mean sentiment of retrieved analyst reports, 0 when there are none.
    pub fn memory_sentiment(&self) -> f64 {
        let s: Vec<f64> = self
            .retrieved
            .iter()
            .filter_map(|r| r.report())
            .map(|r| r.sentiment)
            .collect();
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizingParams {
    pub kelly_scale: f64,
    pub cvar_alpha: f64,
    pub cvar_budget: f64,
    pub lookback: usize,
    /// Order size used when risk-sensitive sizing is switched off.
    pub fixed_units: i64,
}

impl Default for SizingParams {
    fn default() -> Self {
        SizingParams {
            kelly_scale: 0.5,
            cvar_alpha: 0.95,
            cvar_budget: 0.05,
            lookback: 60,
            fixed_units: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingInputs {
    pub win_prob: f64,
    pub payoff_ratio: f64,
    pub kelly_scale: f64,
    pub cvar_alpha: f64,
    pub cvar_budget: f64,
    pub lookback: usize,
}

impl SizingInputs {
    pub fn new(win_prob: f64, payoff_ratio: f64, params: &SizingParams) -> Self {
        SizingInputs {
            win_prob,
            payoff_ratio,
            kelly_scale: params.kelly_scale,
            cvar_alpha: params.cvar_alpha,
            cvar_budget: params.cvar_budget,
            lookback: params.lookback,
        }
    }
}

/// `clamp(scale * (p - (1 - p) / b), 0, 1)`; non-finite inputs size to zero.
pub fn kelly_fraction(win_prob: f64, payoff_ratio: f64, kelly_scale: f64) -> f64 {
    let raw = win_prob - (1.0 - win_prob) / payoff_ratio;
    let f = kelly_scale * raw;
    if f.is_finite() {
        f.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("no returns to estimate risk from")]
    EmptyReturns,
    #[error("confidence level must lie in (0.5, 1), got {0}")]
    BadAlpha(f64),
}

fn tail_size(n: usize, alpha: f64) -> usize {
    // The epsilon keeps (1 - 0.95) * 100000 from rounding up to 5001.
    let k = ((1.0 - alpha) * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

fn sorted_tail(returns: &[f64], alpha: f64) -> Result<(Vec<f64>, usize), RiskError> {
    if returns.is_empty() {
        return Err(RiskError::EmptyReturns);
    }
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(RiskError::BadAlpha(alpha));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = tail_size(sorted.len(), alpha);
    Ok((sorted, k))
}

/// Historical-simulation expected shortfall as a positive loss fraction:
/// the negated mean of the worst `ceil((1 - alpha) n)` returns, floored at 0.
pub fn cvar(returns: &[f64], alpha: f64) -> Result<f64, RiskError> {
    let (sorted, k) = sorted_tail(returns, alpha)?;
    let mean = sorted[..k].iter().sum::<f64>() / k as f64;
    Ok((-mean).max(0.0))
}

/// The tail boundary under the same convention as [`cvar`].
pub fn value_at_risk(returns: &[f64], alpha: f64) -> Result<f64, RiskError> {
    let (sorted, k) = sorted_tail(returns, alpha)?;
    Ok((-sorted[k - 1]).max(0.0))
}

/// Share count for a non-hold direction. Zero means "do not trade".
pub fn size_position(ctx: &PolicyContext, inputs: &SizingInputs, direction: Direction, allow_short: bool) -> i64 {
    let mut fraction = kelly_fraction(inputs.win_prob, inputs.payoff_ratio, inputs.kelly_scale);
    let returns = ctx.view.returns(inputs.lookback);
    if let Ok(risk) = cvar(&returns, inputs.cvar_alpha) {
        if risk > 0.0 {
            fraction = fraction.min(inputs.cvar_budget / risk);
        }
    }
    let price = ctx.price;
    // Whole shares; the tolerance stops 0.6 - 0.4 = 0.19999.. from losing a share.
    let shares = |x: f64| (x + 1e-9).floor().max(0.0) as i64;
    match direction {
        Direction::Hold => 0,
        Direction::Buy => {
            let target = shares(fraction * ctx.equity() / price);
            let affordable = (ctx.account.cash / price).floor() as i64;
            target.min(affordable).max(0)
        }
        Direction::Sell if allow_short => shares(fraction * ctx.equity() / price),
        Direction::Sell => {
            let held = ctx.account.position.max(0);
            shares(fraction * held as f64).min(held)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionChoice {
    pub direction: Direction,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingEstimate {
    pub win_prob: f64,
    pub payoff_ratio: f64,
    pub rationale: String,
}

pub trait DirectionAgent {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<DirectionChoice, AgentError>;
}

pub trait SizingAgent {
    fn estimate(&mut self, ctx: &PolicyContext, direction: Direction) -> Result<SizingEstimate, AgentError>;
}

pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionParams {
    /// Score magnitude needed to act.
    pub entry_threshold: f64,
    pub sentiment_weight: f64,
    /// Moves smaller than this fraction of price count as flat.
    pub min_move: f64,
}

impl Default for DirectionParams {
    fn default() -> Self {
        DirectionParams {
            entry_threshold: 2.0,
            sentiment_weight: 1.0,
            min_move: 0.0,
        }
    }
}

fn vote(x: f64, eps: f64) -> f64 {
    if x > eps {
        1.0
    } else if x < -eps {
        -1.0
    } else {
        0.0
    }
}

/// Threshold rule over momentum votes plus remembered sentiment.
///
/// With financial-insight reasoning on, each of the 1/7/30-day features casts
/// one vote; with it off, only the 1-day move is read and weighted three times.
#[derive(Debug, Clone, Default)]
pub struct RuleDirectionAgent {
    pub params: DirectionParams,
}

impl RuleDirectionAgent {
    pub fn score(&self, ctx: &PolicyContext) -> f64 {
        let eps = self.params.min_move * ctx.price;
        let m = ctx.momentum;
        let votes = if ctx.ablation.fip {
            vote(m.d1, eps) + vote(m.d7, eps) + vote(m.d30, eps)
        } else {
            3.0 * vote(m.d1, eps)
        };
        votes + self.params.sentiment_weight * ctx.memory_sentiment()
    }
}

impl DirectionAgent for RuleDirectionAgent {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<DirectionChoice, AgentError> {
        let score = self.score(ctx);
        let th = self.params.entry_threshold;
        let direction = if score >= th {
            Direction::Buy
        } else if score <= -th {
            Direction::Sell
        } else {
            Direction::Hold
        };
        Ok(DirectionChoice {
            direction,
            rationale: format!(
                "score {score:.4} vs threshold {th} (d1 {:.4}, d7 {:.4}, d30 {:.4}, sentiment {:.4})",
                ctx.momentum.d1,
                ctx.momentum.d7,
                ctx.momentum.d30,
                ctx.memory_sentiment()
            ),
        })
    }
}

/// `p = 0.5 + 0.1 * (#features agreeing with the direction)`, `b = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSizingAgent;

impl SizingAgent for RuleSizingAgent {
    fn estimate(&mut self, ctx: &PolicyContext, direction: Direction) -> Result<SizingEstimate, AgentError> {
        let sign = direction.sign() as f64;
        let agreeing = ctx
            .momentum
            .as_array()
            .iter()
            .filter(|d| **d * sign > 0.0)
            .count();
        let win_prob = 0.5 + 0.1 * agreeing as f64;
        Ok(SizingEstimate {
            win_prob,
            payoff_ratio: 1.0,
            rationale: format!("{agreeing}/3 momentum features agree"),
        })
    }
}

/// Direction agent followed by the quantity/risk agent.
pub struct DualAgentPolicy {
    pub direction: Box<dyn DirectionAgent>,
    pub sizing: Box<dyn SizingAgent>,
    pub params: SizingParams,
    pub allow_short: bool,
}

impl DualAgentPolicy {
    pub fn rules(direction: DirectionParams, params: SizingParams) -> Self {
        DualAgentPolicy {
            direction: Box::new(RuleDirectionAgent { params: direction }),
            sizing: Box::new(RuleSizingAgent),
            params,
            allow_short: false,
        }
    }
}

fn degraded(e: AgentError, stage: &str) -> Result<TradeDecision, AgentError> {
    match e {
        AgentError::Degraded(why) => Ok(TradeDecision::hold(format!("[degraded {stage}] {why}"))),
        fatal => Err(fatal),
    }
}

impl Policy for DualAgentPolicy {
    fn name(&self) -> &str {
        "finrs"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError> {
        let ids = ctx.memory_ids();
        let choice = match self.direction.decide(ctx) {
            Ok(c) => c,
            Err(e) => return degraded(e, "direction").map(|d| d.with_memories(ids)),
        };
        if choice.direction == Direction::Hold {
            return Ok(TradeDecision::hold(choice.rationale).with_memories(ids));
        }
        if !ctx.ablation.rs {
            let q = self.params.fixed_units;
            let rationale = format!("{}; fixed size {q}", choice.rationale);
            return Ok(TradeDecision::new(choice.direction, q, rationale).with_memories(ids));
        }
        let estimate = match self.sizing.estimate(ctx, choice.direction) {
            Ok(e) => e,
            Err(e) => return degraded(e, "sizing").map(|d| d.with_memories(ids)),
        };
        let inputs = SizingInputs::new(estimate.win_prob, estimate.payoff_ratio, &self.params);
        let q = size_position(ctx, &inputs, choice.direction, self.allow_short);
        let rationale = format!(
            "{}; p {:.2} b {:.2} ({}) -> {q} shares",
            choice.rationale, estimate.win_prob, estimate.payoff_ratio, estimate.rationale
        );
        Ok(TradeDecision::new(choice.direction, q, rationale).with_memories(ids))
    }
}

fn max_affordable(ctx: &PolicyContext) -> i64 {
    (ctx.account.cash / ctx.price).floor().max(0.0) as i64
}

/// Buys everything affordable on the first day and never trades again.
#[derive(Debug, Clone, Default)]
pub struct BuyHoldPolicy {
    bought: bool,
}

impl Policy for BuyHoldPolicy {
    fn name(&self) -> &str {
        "buy_hold"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError> {
        if self.bought {
            return Ok(TradeDecision::hold("holding"));
        }
        self.bought = true;
        let q = max_affordable(ctx);
        Ok(TradeDecision::new(Direction::Buy, q, "initial full allocation"))
    }
}

/// Uniform direction and a uniform fraction of the feasible size.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError> {
        // Both draws happen every day so the stream never depends on state.
        let pick: u32 = self.rng.random_range(0..3);
        let fraction: f64 = self.rng.random();
        let (direction, q) = match pick {
            0 => (Direction::Buy, (fraction * max_affordable(ctx) as f64).floor() as i64),
            1 => (
                Direction::Sell,
                (fraction * ctx.account.position.max(0) as f64).floor() as i64,
            ),
            _ => (Direction::Hold, 0),
        };
        Ok(TradeDecision::new(direction, q, format!("random {} fraction {fraction:.6}", direction.as_str())))
    }
}

/// Exponential moving average seeded with the first value,
/// updated as `prev + alpha * (x - prev)` with `alpha = 2 / (span + 1)`.
pub fn ema(values: &[f64], span: usize) -> Vec<f64> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut prev = match values.first() {
        Some(&v) => v,
        None => return out,
    };
    for &x in values {
        prev += alpha * (x - prev);
        out.push(prev);
    }
    out
}

/// MACD(12, 26) line and its 9-period signal line.
pub fn macd_lines(closes: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fast = ema(closes, 12);
    let slow = ema(closes, 26);
    let line: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal = ema(&line, 9);
    (line, signal)
}

/// Crossover of MACD over its signal between `t-1` and `t`.
/// `closes` must end at `t`.
pub fn macd_signal(closes: &[f64]) -> Direction {
    let t = closes.len().saturating_sub(1);
    if t == 0 {
        return Direction::Hold;
    }
    let (line, signal) = macd_lines(closes);
    let prev = line[t - 1] - signal[t - 1];
    let cur = line[t] - signal[t];
    if prev <= 0.0 && cur > 0.0 {
        Direction::Buy
    } else if prev >= 0.0 && cur < 0.0 {
        Direction::Sell
    } else {
        Direction::Hold
    }
}

pub fn macd_policy(closes: &[f64], t: usize) -> Direction {
    macd_signal(&closes[..=t.min(closes.len() - 1)])
}

fn rsi_from(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

/// Wilder RSI at every index; `None` until `period` changes are available.
pub fn rsi_values(closes: &[f64], period: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    if period == 0 || closes.len() <= period {
        return out;
    }
    let change = |i: usize| closes[i] - closes[i - 1];
    let mut gain = 0.0;
    let mut loss = 0.0;
    for i in 1..=period {
        let c = change(i);
        gain += c.max(0.0);
        loss += (-c).max(0.0);
    }
    let n = period as f64;
    gain /= n;
    loss /= n;
    out[period] = Some(rsi_from(gain, loss));
    for (i, slot) in out.iter_mut().enumerate().skip(period + 1) {
        let c = change(i);
        gain = (gain * (n - 1.0) + c.max(0.0)) / n;
        loss = (loss * (n - 1.0) + (-c).max(0.0)) / n;
        *slot = Some(rsi_from(gain, loss));
    }
    out
}

pub const RSI_OVERSOLD: f64 = 30.0;
pub const RSI_OVERBOUGHT: f64 = 70.0;

/// Buy when RSI rises through 30, sell when it falls through 70.
/// `closes` must end at the decision day.
pub fn rsi_signal(closes: &[f64], period: usize) -> Direction {
    let values = rsi_values(closes, period);
    let t = closes.len().saturating_sub(1);
    if t == 0 {
        return Direction::Hold;
    }
    match (values[t - 1], values[t]) {
        (Some(prev), Some(cur)) if prev < RSI_OVERSOLD && cur >= RSI_OVERSOLD => Direction::Buy,
        (Some(prev), Some(cur)) if prev > RSI_OVERBOUGHT && cur <= RSI_OVERBOUGHT => Direction::Sell,
        _ => Direction::Hold,
    }
}

pub fn rsi_policy(closes: &[f64], t: usize, period: usize) -> Direction {
    rsi_signal(&closes[..=t.min(closes.len() - 1)], period)
}

fn all_in_or_out(ctx: &PolicyContext, direction: Direction, why: String) -> TradeDecision {
    match direction {
        Direction::Buy => TradeDecision::new(Direction::Buy, max_affordable(ctx), why),
        Direction::Sell => TradeDecision::new(Direction::Sell, ctx.account.position.max(0), why),
        Direction::Hold => TradeDecision::hold(why),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MacdPolicy;

impl Policy for MacdPolicy {
    fn name(&self) -> &str {
        "macd"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError> {
        let d = macd_signal(ctx.view.history());
        Ok(all_in_or_out(ctx, d, format!("macd crossover: {}", d.as_str())))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RsiPolicy {
    pub period: usize,
}

impl Default for RsiPolicy {
    fn default() -> Self {
        RsiPolicy { period: 14 }
    }
}

impl Policy for RsiPolicy {
    fn name(&self) -> &str {
        "rsi"
    }

    fn decide(&mut self, ctx: &PolicyContext) -> Result<TradeDecision, AgentError> {
        let d = rsi_signal(ctx.view.history(), self.period);
        Ok(all_in_or_out(ctx, d, format!("rsi({}) cross: {}", self.period, d.as_str())))
    }
}
