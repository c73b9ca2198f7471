//! Cash/position ledger and order execution at the daily close.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{Direction, TradeDecision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub cash: f64,
    pub position: i64,
    /// Last price the position was marked at.
    pub mark: f64,
}

impl AccountState {
    pub fn new(cash: f64, mark: f64) -> Self {
        AccountState {
            cash,
            position: 0,
            mark,
        }
    }

    pub fn equity(&self) -> f64 {
        self.equity_at(self.mark)
    }

    pub fn equity_at(&self, price: f64) -> f64 {
        self.cash + self.position as f64 * price
    }

    pub fn marked(self, price: f64) -> Self {
        AccountState { mark: price, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLogEntry {
    pub t: usize,
    pub direction: Direction,
    pub requested_qty: i64,
    pub executed_qty: i64,
    pub price: f64,
    pub fee: f64,
    pub cash_after: f64,
    pub position_after: i64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionParams {
    pub fee_bps: f64,
    pub allow_short: bool,
}

impl Default for ExecutionParams {
    fn default() -> Self {
        ExecutionParams {
            fee_bps: 0.0,
            allow_short: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortfolioError {
    #[error("execution price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("fee must be non-negative, got {0} bps")]
    NegativeFee(f64),
}

pub fn fee_for(qty: i64, price: f64, fee_bps: f64) -> f64 {
    qty as f64 * price * fee_bps / 10_000.0
}

/// Fills `decision` at `price`, clamping infeasible sizes and flagging them.
///
/// Buys are capped by what cash covers including the fee, sells by the held
/// position unless shorting is enabled.
pub fn execute(
    state: &AccountState,
    decision: &TradeDecision,
    price: f64,
    params: &ExecutionParams,
    t: usize,
) -> Result<(AccountState, TradeLogEntry), PortfolioError> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(PortfolioError::NonPositivePrice(price));
    }
    if params.fee_bps < 0.0 {
        return Err(PortfolioError::NegativeFee(params.fee_bps));
    }
    let requested = match decision.direction {
        Direction::Hold => 0,
        _ => decision.quantity.max(0),
    };
    let executed = match decision.direction {
        Direction::Hold => 0,
        Direction::Buy => {
            let per_share = price * (1.0 + params.fee_bps / 10_000.0);
            let mut q = requested.min((state.cash / per_share).floor().max(0.0) as i64);
            while q > 0 && q as f64 * price + fee_for(q, price, params.fee_bps) > state.cash {
                q -= 1;
            }
            q
        }
        Direction::Sell if params.allow_short => requested,
        Direction::Sell => requested.min(state.position.max(0)),
    };
    let d = decision.direction.sign();
    let fee = fee_for(executed, price, params.fee_bps);
    let next = AccountState {
        cash: state.cash - d as f64 * executed as f64 * price - fee,
        position: state.position + d * executed,
        mark: price,
    };
    let entry = TradeLogEntry {
        t,
        direction: decision.direction,
        requested_qty: requested,
        executed_qty: executed,
        price,
        fee,
        cash_after: next.cash,
        position_after: next.position,
        clamped: executed != requested,
    };
    Ok((next, entry))
}

/// Re-applies logged fills to `initial`.
pub fn replay_trades(initial: AccountState, log: &[TradeLogEntry]) -> AccountState {
    log.iter().fold(initial, |s, e| {
        let d = e.direction.sign();
        AccountState {
            cash: s.cash - d as f64 * e.executed_qty as f64 * e.price - e.fee,
            position: s.position + d * e.executed_qty,
            mark: e.price,
        }
    })
}

pub fn trades_jsonl(log: &[TradeLogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("trade entry serializes"));
        out.push('\n');
    }
    out
}
