//! The daily loop: perceive, remember, decide, size, execute, reward, reflect.
//!
//! Decisions read prices through an audited [`MarketView`] that ends at the
//! decision day. Rewards look forward, so a day's reflection is held back
//! until the longest horizon it used has been reached by the loop.

use std::collections::VecDeque;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::audit::{AccessAudit, Phase};
use crate::config::{AgentKind, AnalyzerKind, ConfigError, PolicyKind, RunConfig};
use crate::decision::{
    BuyHoldPolicy, Direction, DualAgentPolicy, MacdPolicy, MarketView, Policy, PolicyContext,
    RandomPolicy, RsiPolicy, TradeDecision,
};
use crate::llm::{LlmAnalyzer, LlmDirectionAgent, LlmReflector, LlmSizingAgent, SharedClient};
use crate::market_data::{
    forward_momentum, load_filings, load_news, load_ohlcv, trailing_momentum, DataError, FilingDoc,
    NewsItem, PriceSeries, HORIZONS,
};
use crate::memory::{abs_percentile, ContentFilter, MemoryStore, RetrievalQuery};
use crate::metrics::{MetricsError, PerformanceSummary};
use crate::perception::{analyze, filter, sort_signals, Analyzer, Lexicon, LexiconAnalyzer, LexiconError, Signal, SourceKind};
use crate::portfolio::{execute, AccountState, PortfolioError, TradeLogEntry};
use crate::reward::{benchmark_pnl, reflect, reward, MomentumScore, Reflector, RewardRecord, TemplateReflector};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("no trading days between {start} and {end}")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("run range {start}..{end} is outside the loaded data {first}..{last}")]
    RangeOutsideData {
        start: NaiveDate,
        end: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("data gap of {days} calendar days between {from} and {to} exceeds run.max_gap_days")]
    DataGap { from: NaiveDate, to: NaiveDate, days: i64 },
    #[error("cannot calibrate memory.theta_p: {0}; set memory.theta_p explicitly")]
    ThetaCalibration(String),
    #[error("agent failure on day {t}: {message}")]
    Agent { t: usize, message: String },
    #[error(transparent)]
    Portfolio(#[from] PortfolioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("accounting invariant broken on day {t}: {message}")]
    Invariant { t: usize, message: String },
}

/// Everything a run reads from disk.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub series: PriceSeries,
    pub news: Vec<NewsItem>,
    pub filings: Vec<FilingDoc>,
    pub lexicon: Lexicon,
}

impl DataBundle {
    pub fn new(series: PriceSeries) -> Self {
        DataBundle {
            series,
            news: Vec::new(),
            filings: Vec::new(),
            lexicon: Lexicon::default(),
        }
    }

    /// Loads the files named in `[data]`, resolved against the config's directory.
    pub fn load(config: &RunConfig) -> Result<Self, BacktestError> {
        let ohlcv = config
            .data
            .ohlcv
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("data.ohlcv is not set".into()))?;
        let mut series = load_ohlcv(&config.resolve(ohlcv))?;
        series.ticker = config.run.ticker.to_uppercase();
        let news = match &config.data.news {
            Some(p) => load_news(&config.resolve(p))?.items,
            None => Vec::new(),
        };
        let filings = match &config.data.filings {
            Some(p) => load_filings(&config.resolve(p))?.items,
            None => Vec::new(),
        };
        let lexicon = match &config.data.lexicon {
            Some(p) => Lexicon::load(&config.resolve(p))?,
            None => Lexicon::default(),
        };
        Ok(DataBundle {
            series,
            news,
            filings,
            lexicon,
        })
    }

    /// News and filings as signals in canonical processing order.
    pub fn signals(&self) -> Vec<Signal> {
        let mut out: Vec<Signal> = self
            .news
            .iter()
            .enumerate()
            .map(|(i, n)| Signal::from_news(n, i))
            .chain(self.filings.iter().enumerate().map(|(i, f)| Signal::from_filing(f, i)))
            .collect();
        sort_signals(&mut out);
        out
    }
}

/// The analyzer, trading policy and reflector driving one run.
pub struct Agents {
    pub analyzer: Box<dyn Analyzer>,
    pub policy: Box<dyn Policy>,
    pub reflector: Box<dyn Reflector>,
}

impl Agents {
    /// Deterministic agents for the configured policy. Fails if the config
    /// asks for LLM-backed agents.
    pub fn stub(config: &RunConfig, lexicon: &Lexicon) -> Result<Self, BacktestError> {
        Self::build(config, lexicon, None)
    }

    pub fn build(config: &RunConfig, lexicon: &Lexicon, client: Option<SharedClient>) -> Result<Self, BacktestError> {
        let needs_llm = config.run.analyzer == AnalyzerKind::Llm
            || (config.run.agents == AgentKind::Llm && config.run.policy == PolicyKind::Finrs);
        let client = match (needs_llm, client) {
            (true, None) => {
                return Err(ConfigError::Invalid(
                    "config selects LLM agents but no endpoint client or transcript was supplied".into(),
                )
                .into())
            }
            (_, c) => c,
        };
        let analyzer: Box<dyn Analyzer> = match (config.run.analyzer, &client) {
            (AnalyzerKind::Llm, Some(c)) => Box::new(LlmAnalyzer { client: c.clone() }),
            _ => Box::new(LexiconAnalyzer::new(lexicon.clone())),
        };
        let llm_agents = config.run.agents == AgentKind::Llm && config.run.policy == PolicyKind::Finrs;
        let policy: Box<dyn Policy> = match config.run.policy {
            PolicyKind::Finrs => {
                let mut p = DualAgentPolicy::rules(config.direction, config.sizing);
                p.allow_short = config.execution.allow_short;
                if let (true, Some(c)) = (llm_agents, &client) {
                    p.direction = Box::new(LlmDirectionAgent { client: c.clone() });
                    p.sizing = Box::new(LlmSizingAgent {
                        client: c.clone(),
                        lookback: config.sizing.lookback,
                        cvar_alpha: config.sizing.cvar_alpha,
                    });
                }
                Box::new(p)
            }
            PolicyKind::BuyHold => Box::new(BuyHoldPolicy::default()),
            PolicyKind::Random => Box::new(RandomPolicy::new(config.run.seed)),
            PolicyKind::Macd => Box::new(MacdPolicy),
            PolicyKind::Rsi => Box::new(RsiPolicy {
                period: config.run.rsi_period,
            }),
        };
        let reflector: Box<dyn Reflector> = match (llm_agents, &client) {
            (true, Some(c)) => Box::new(LlmReflector {
                client: c.clone(),
                ticker: config.run.ticker.to_uppercase(),
                ablation: config.ablation,
            }),
            _ => Box::new(TemplateReflector),
        };
        Ok(Agents {
            analyzer,
            policy,
            reflector,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub t: usize,
    pub date: NaiveDate,
    pub close: f64,
    pub cash: f64,
    pub position: i64,
    pub equity: f64,
}

/// One day's decision as the policy produced it, before execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: usize,
    pub date: NaiveDate,
    pub decision: TradeDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub ticker: String,
    pub policy: String,
    pub equity: Vec<EquityPoint>,
    pub decisions: Vec<DecisionRecord>,
    pub trades: Vec<TradeLogEntry>,
    pub rewards: Vec<RewardRecord>,
    pub memory: MemoryStore,
    pub summary: PerformanceSummary,
    pub theta_p: f64,
    pub config_hash: String,
}

impl BacktestResult {
    pub fn equity_curve(&self) -> Vec<f64> {
        self.equity.iter().map(|p| p.equity).collect()
    }
}

struct Window {
    lo: usize,
    hi: usize,
    train_lo: usize,
}

fn locate(config: &RunConfig, series: &PriceSeries) -> Result<Window, BacktestError> {
    let dates = series.dates();
    let (first, last) = (dates[0], dates[dates.len() - 1]);
    let start = config.run.start.unwrap_or(first);
    let end = config.run.end.unwrap_or(last);
    if start < first || end > last {
        return Err(BacktestError::RangeOutsideData { start, end, first, last });
    }
    let lo = dates.partition_point(|d| *d < start);
    let hi_excl = dates.partition_point(|d| *d <= end);
    if lo >= hi_excl {
        return Err(BacktestError::EmptyRange { start, end });
    }
    let train_lo = match config.run.train_start {
        Some(ts) => dates.partition_point(|d| *d < ts),
        None => 0,
    };
    for w in dates[lo..hi_excl].windows(2) {
        let days = (w[1] - w[0]).num_days();
        if days > config.run.max_gap_days {
            return Err(BacktestError::DataGap {
                from: w[0],
                to: w[1],
                days,
            });
        }
    }
    Ok(Window {
        lo,
        hi: hi_excl - 1,
        train_lo,
    })
}

/// Days a reward stays hidden from decisions: the longest horizon it reads.
pub fn reward_delay(multi_timescale: bool) -> usize {
    if multi_timescale {
        HORIZONS[HORIZONS.len() - 1]
    } else {
        HORIZONS[0]
    }
}

/// Forward momentum score at `t` under the run's reward switches.
/// The single-timescale variant reads only the next close.
pub fn score_at(closes: &[f64], t: usize, config: &RunConfig) -> Result<MomentumScore, DataError> {
    let f = forward_momentum(closes, t)?;
    let score = if config.ablation.mtr {
        MomentumScore::new(f.d1, f.d7, f.d30, f.horizons_truncated)
    } else {
        MomentumScore::new(f.d1, 0.0, 0.0, t + 1 >= closes.len())
    };
    Ok(if config.reward.normalize_by_price {
        score.normalized(closes[t])
    } else {
        score
    })
}

/// Nearest-rank percentile of the passive agent's |reward| over the training
/// window, unless `memory.theta_p` is set.
pub fn calibrate_theta(config: &RunConfig, train: &[f64]) -> Result<f64, BacktestError> {
    if let Some(theta) = config.memory.theta_p {
        return Ok(theta);
    }
    if train.len() < 2 {
        return Err(BacktestError::ThetaCalibration(format!(
            "training window has {} bars before the run start, need at least 2",
            train.len()
        )));
    }
    let rewards: Vec<f64> = (0..train.len())
        .map(|t| score_at(train, t, config).map(|s| s.total * s.total))
        .collect::<Result<_, _>>()?;
    match abs_percentile(&rewards, config.memory.theta_percentile) {
        Some(theta) if theta > 0.0 => Ok(theta),
        _ => Err(BacktestError::ThetaCalibration(
            "training window prices never move".into(),
        )),
    }
}

fn agent_failure(t: usize, e: AgentError) -> BacktestError {
    BacktestError::Agent {
        t,
        message: e.to_string(),
    }
}

/// Runs the configured backtest over `data`. When `audit` is given every
/// price read is tagged with its phase.
pub fn run(
    config: &RunConfig,
    data: &DataBundle,
    agents: &mut Agents,
    audit: Option<&AccessAudit>,
) -> Result<BacktestResult, BacktestError> {
    config.validate()?;
    let series = &data.series;
    let win = locate(config, series)?;
    let closes = series.closes();
    let dates = series.dates();
    let range = &closes[win.lo..=win.hi];
    let ticker = config.run.ticker.to_uppercase();
    let theta_p = calibrate_theta(config, &closes[win.train_lo..win.lo])?;
    let mut memory = MemoryStore::new(config.memory.params(theta_p));

    let mut signals: VecDeque<Signal> = data
        .signals()
        .into_iter()
        .filter(|s| config.ablation.mn || !matches!(s.source_kind, SourceKind::News | SourceKind::Macro))
        .collect();
    // Signals published before the bar preceding the run are history, not news.
    let since = win.lo.checked_sub(1).map(|i| dates[i]);
    while signals.front().is_some_and(|s| since.is_some_and(|d| s.date() <= d)) {
        signals.pop_front();
    }

    let delay = reward_delay(config.ablation.mtr);
    let days = range.len();
    let mut account = AccountState::new(config.run.initial_cash, range[0]);
    let mut equity = Vec::with_capacity(days);
    let mut curve: Vec<f64> = Vec::with_capacity(days);
    let mut decisions = Vec::with_capacity(days);
    let mut trades = Vec::new();
    let mut rewards: Vec<RewardRecord> = Vec::with_capacity(days);
    let mut pending: VecDeque<(RewardRecord, Vec<u64>)> = VecDeque::new();

    for t in 0..days {
        let g = win.lo + t;
        let date = dates[g];
        let price = closes[g];

        while signals.front().is_some_and(|s| s.date() <= date) {
            let signal = signals.pop_front().expect("front checked");
            if let Some(a) = audit {
                a.record(Phase::Perception, g, dates.partition_point(|d| *d <= signal.date()).saturating_sub(1));
            }
            let verdict = filter(&signal, &ticker, date, &data.lexicon).map_err(|e| BacktestError::Agent {
                t,
                message: e.to_string(),
            })?;
            if !verdict.include {
                continue;
            }
            let report = analyze(agents.analyzer.as_mut(), &signal, &config.ablation).map_err(|e| agent_failure(t, e))?;
            memory.insert(report, t);
        }

        memory.decay_step(t);
        let mut retrieved = memory.retrieve(&RetrievalQuery::new(&ticker, t, config.memory.k).content(ContentFilter::Reports));
        if config.memory.k_reflections > 0 {
            retrieved.extend(memory.retrieve(
                &RetrievalQuery::new(&ticker, t, config.memory.k_reflections).content(ContentFilter::Reflections),
            ));
        }

        let mut view = MarketView::new(&closes, g);
        if let Some(a) = audit {
            view = view.audited(a);
        }
        let momentum = trailing_momentum(view.history(), g)?;
        let ctx = PolicyContext {
            ticker: &ticker,
            t,
            date,
            momentum,
            retrieved: &retrieved,
            account: account.marked(price),
            price: view.price(),
            ablation: config.ablation,
            view,
        };
        let decision = match agents.policy.decide(&ctx) {
            Ok(d) => d,
            Err(AgentError::Degraded(why)) => TradeDecision::hold(format!("[degraded] {why}")),
            Err(fatal) => return Err(agent_failure(t, fatal)),
        };

        let before = account.position;
        let (next, entry) = execute(&account, &decision, price, &config.execution, t)?;
        account = next;
        if decision.direction != Direction::Hold {
            trades.push(entry);
        }
        let eq = account.equity();
        if (eq - (account.cash + account.position as f64 * price)).abs() > 1e-9 * eq.abs().max(1.0)
            || account.cash < -1e-9
            || (!config.execution.allow_short && account.position < 0)
        {
            return Err(BacktestError::Invariant {
                t,
                message: format!("cash {} position {} equity {eq}", account.cash, account.position),
            });
        }
        equity.push(EquityPoint {
            t,
            date,
            close: price,
            cash: account.cash,
            position: account.position,
            equity: eq,
        });
        curve.push(eq);

        if let Some(a) = audit {
            for h in HORIZONS {
                a.record(Phase::Evaluation, g, win.lo + (t + h).min(days - 1));
            }
        }
        let score = score_at(range, t, config)?;
        let record = reward(
            t,
            before,
            account.position,
            score,
            benchmark_pnl(&curve, t, config.reward.window),
            config.reward.action_scale,
        );
        rewards.push(record.clone());
        pending.push_back((record, decision.contributing_memory_ids.clone()));
        decisions.push(DecisionRecord { t, date, decision });

        while pending.front().is_some_and(|(r, _)| r.t + delay <= t) {
            let (r, ids) = pending.pop_front().expect("front checked");
            reflect_one(agents, &mut memory, &ticker, &r, &ids, t)?;
        }
    }
    while let Some((r, ids)) = pending.pop_front() {
        reflect_one(agents, &mut memory, &ticker, &r, &ids, days - 1)?;
    }

    let summary = PerformanceSummary::of(&curve)?;
    Ok(BacktestResult {
        ticker,
        policy: agents.policy.name().to_string(),
        equity,
        decisions,
        trades,
        rewards,
        memory,
        summary,
        theta_p,
        config_hash: config.hash(),
    })
}

fn reflect_one(
    agents: &mut Agents,
    memory: &mut MemoryStore,
    ticker: &str,
    record: &RewardRecord,
    ids: &[u64],
    today: usize,
) -> Result<(), BacktestError> {
    let text = match agents.reflector.reflect(record) {
        Ok(text) => text,
        Err(AgentError::Degraded(_)) => crate::reward::describe(record),
        Err(fatal) => return Err(agent_failure(record.t, fatal)),
    };
    reflect(memory, ticker, record, ids, text, today);
    Ok(())
}

/// Loads data, builds deterministic agents and runs.
pub fn run_stub(config: &RunConfig) -> Result<BacktestResult, BacktestError> {
    let data = DataBundle::load(config)?;
    let mut agents = Agents::stub(config, &data.lexicon)?;
    run(config, &data, &mut agents, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunSection;
    use crate::market_data::Bar;

    pub(crate) fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn config(policy: PolicyKind) -> RunConfig {
        let mut run = RunSection::new("TEST");
        run.policy = policy;
        let mut c = RunConfig::new(run);
        c.memory.theta_p = Some(1.0);
        c
    }

    fn ramp(n: usize, from: f64, to: f64) -> Vec<f64> {
        (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect()
    }

    fn run_closes(c: &RunConfig, closes: &[f64]) -> BacktestResult {
        let data = DataBundle::new(PriceSeries::from_closes("TEST", d("2025-01-06"), closes).unwrap());
        let mut agents = Agents::stub(c, &data.lexicon).unwrap();
        run(c, &data, &mut agents, None).unwrap()
    }

    #[test]
    fn buy_hold_on_ramp() {
        let c = config(PolicyKind::BuyHold);
        let r = run_closes(&c, &ramp(50, 100.0, 150.0));
        // 100 shares at 100, worth 150 each at the end.
        assert!((r.summary.cr_pct - 50.0).abs() < 1e-9);
        assert_eq!(r.equity.len(), 50);
        assert_eq!(r.rewards.len(), 50);
        assert_eq!(r.trades.len(), 1);
    }

    #[test]
    fn random_policy_is_reproducible() {
        let mut c = config(PolicyKind::Random);
        c.run.seed = 7;
        let closes: Vec<f64> = (0..60).map(|i| 100.0 + ((i * 37) % 11) as f64).collect();
        let a = run_closes(&c, &closes);
        let b = run_closes(&c, &closes);
        assert_eq!(a.trades, b.trades);
        c.run.seed = 8;
        assert_ne!(run_closes(&c, &closes).trades, a.trades);
    }

    #[test]
    fn data_gap_is_rejected() {
        let mut bars: Vec<Bar> = (0..10).map(|i| Bar::flat(d("2025-01-01") + chrono::Days::new(i), 10.0)).collect();
        bars[9].date = d("2025-02-01");
        let data = DataBundle::new(PriceSeries::new("TEST", bars).unwrap());
        let c = config(PolicyKind::BuyHold);
        let mut agents = Agents::stub(&c, &data.lexicon).unwrap();
        assert!(matches!(run(&c, &data, &mut agents, None), Err(BacktestError::DataGap { days: 23, .. })));
    }

    #[test]
    fn range_outside_data_is_rejected() {
        let mut c = config(PolicyKind::BuyHold);
        c.run.end = Some(d("2030-01-01"));
        let data = DataBundle::new(PriceSeries::from_closes("TEST", d("2025-01-06"), &ramp(10, 1.0, 2.0)).unwrap());
        let mut agents = Agents::stub(&c, &data.lexicon).unwrap();
        assert!(matches!(run(&c, &data, &mut agents, None), Err(BacktestError::RangeOutsideData { .. })));
    }

    #[test]
    fn theta_needs_training_data_or_explicit_value() {
        let mut c = config(PolicyKind::Finrs);
        c.memory.theta_p = None;
        let closes = ramp(80, 100.0, 140.0);
        let series = PriceSeries::from_closes("TEST", d("2025-01-06"), &closes).unwrap();
        let data = DataBundle::new(series.clone());
        let mut agents = Agents::stub(&c, &data.lexicon).unwrap();
        assert!(matches!(run(&c, &data, &mut agents, None), Err(BacktestError::ThetaCalibration(_))));

        c.run.start = Some(series.dates()[40]);
        let mut agents = Agents::stub(&c, &data.lexicon).unwrap();
        let r = run(&c, &data, &mut agents, None).unwrap();
        assert_eq!(r.equity.len(), 40);
        assert!(r.theta_p > 0.0);
    }

    #[test]
    fn rewards_are_hidden_until_their_horizon_passes() {
        let c = config(PolicyKind::Finrs);
        let closes: Vec<f64> = (0..70).map(|i| 100.0 + (i as f64 * 0.3).sin() * 5.0).collect();
        let r = run_closes(&c, &closes);
        for rec in r.memory.records() {
            if let crate::memory::MemoryContent::Reflection(note) = &rec.content {
                let horizon_end = (note.date + reward_delay(true)).min(69);
                assert!(rec.created_at >= horizon_end, "note for {} stored at {}", note.date, rec.created_at);
            }
        }
    }

    #[test]
    fn llm_selection_without_client_is_a_config_error() {
        let mut c = config(PolicyKind::Finrs);
        c.run.agents = AgentKind::Llm;
        assert!(matches!(Agents::stub(&c, &Lexicon::default()), Err(BacktestError::Config(_))));
    }
}
