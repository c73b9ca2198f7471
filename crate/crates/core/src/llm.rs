//! Chat-completion backed agents with transcript record and replay.
//!
//! Every call goes through [`LlmClient::complete`]: render a role template,
//! send it with retries, parse the fenced JSON answer against the role's
//! schema, and append the exchange to the transcript. A client built from a
//! transcript answers from it in order and refuses any prompt that differs
//! from the recorded one.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::AgentError;
use crate::config::{AblationFlags, LlmConfig};
use crate::decision::{
    cvar, Direction, DirectionAgent, DirectionChoice, PolicyContext, SizingAgent, SizingEstimate,
};
use crate::memory::MemoryRecord;
use crate::perception::{AnalystReport, Analyzer, RiskCue, Signal, StabilityClass, summarize};
use crate::reward::{describe, Reflector, RewardRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Analyst,
    Direction,
    Sizing,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unfilled template slot `{0}`")]
    Unfilled(String),
}

/// Role prompt with `{slot}` placeholders. Braces not wrapping a bare
/// identifier (such as JSON examples) are left alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub role: Role,
    pub system: String,
    pub user: String,
}

fn slot_at(text: &str, open: usize) -> Option<(&str, usize)> {
    let rest = &text[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    let ok = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && name.starts_with(|c: char| c.is_ascii_lowercase());
    ok.then_some((name, open + 1 + close + 1))
}

/// Names of placeholders in `text`, in order of appearance.
pub fn slots(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let open = i + off;
        match slot_at(text, open) {
            Some((name, end)) => {
                out.push(name.to_string());
                i = end;
            }
            None => i = open + 1,
        }
    }
    out
}

fn fill(text: &str, values: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let open = i + off;
        out.push_str(&text[i..open]);
        match slot_at(text, open) {
            Some((name, end)) => {
                let v = values
                    .get(name)
                    .ok_or_else(|| TemplateError::Unfilled(name.to_string()))?;
                out.push_str(v);
                i = end;
            }
            None => {
                out.push('{');
                i = open + 1;
            }
        }
    }
    out.push_str(&text[i..]);
    Ok(out)
}

impl PromptTemplate {
    pub fn required_slots(&self) -> Vec<String> {
        let mut s = slots(&self.system);
        s.extend(slots(&self.user));
        s.sort();
        s.dedup();
        s
    }

    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<Vec<ChatMessage>, TemplateError> {
        Ok(vec![
            ChatMessage::new("system", fill(&self.system, values)?),
            ChatMessage::new("user", fill(&self.user, values)?),
        ])
    }

    /// Built-in template for `role` under the given ablation switches.
    ///
    /// With `rs` off the position and risk fields are dropped; with `fip` off
    /// the reasoning preamble becomes a plain instruction.
    pub fn for_role(role: Role, ablation: &AblationFlags) -> Self {
        let preamble = if ablation.fip { INSIGHT_PREAMBLE } else { PLAIN_PREAMBLE };
        let (system, user) = match role {
            Role::Analyst => (
                format!("{preamble}\nYou are a {{source_kind}} analyst covering {{ticker}}."),
                if ablation.rs {
                    format!("{ANALYST_BODY}\n{ANALYST_RISK}\n{ANALYST_SCHEMA}")
                } else {
                    format!("{ANALYST_BODY}\n{ANALYST_SCHEMA}")
                },
            ),
            Role::Direction => (
                format!("{preamble}\nYou decide the trading direction for {{ticker}}."),
                if ablation.rs {
                    format!("{DIRECTION_BODY}\n{POSITION_FIELDS}\n{DIRECTION_SCHEMA}")
                } else {
                    format!("{DIRECTION_BODY}\n{DIRECTION_SCHEMA}")
                },
            ),
            Role::Sizing => (
                format!("{preamble}\nYou estimate the edge of a proposed {{ticker}} trade."),
                if ablation.rs {
                    format!("{SIZING_BODY}\n{POSITION_FIELDS}\n{RISK_FIELDS}\n{SIZING_SCHEMA}")
                } else {
                    format!("{SIZING_BODY}\n{SIZING_SCHEMA}")
                },
            ),
            Role::Reflection => (
                format!("{preamble}\nYou review yesterday's decisions on {{ticker}}."),
                format!("{REFLECTION_BODY}\n{REFLECTION_SCHEMA}"),
            ),
        };
        PromptTemplate { role, system, user }
    }
}

const INSIGHT_PREAMBLE: &str = "Reason step by step about cause and effect: which event moves which \
driver, how the 1-day, 7-day and 30-day price trends agree or conflict, and how likely each outcome is. \
Weigh downside scenarios before upside ones.";
const PLAIN_PREAMBLE: &str = "Answer the question below.";

const ANALYST_BODY: &str = "Date: {date}\nSource: {source_kind}\nText:\n{text}\n\n\
Summarize the item and score its sentiment for the stock from -1 (very negative) to 1 (very positive).";
const ANALYST_RISK: &str = "Flag risk cues: `downside_indicator` for signs of losses, defaults or \
drawdowns, `volatility_signal` for signs of turbulence or uncertainty, `none` otherwise.";
const ANALYST_SCHEMA: &str = "Reply with free text if you like, then exactly one fenced block:\n\
```json\n{\"summary\": \"...\", \"sentiment\": 0.0, \"risk_cues\": [\"none\"]}\n```";

const DIRECTION_BODY: &str = "Date: {date}\nClose: {price}\n\
Price change over 1 day: {d1}, 7 days: {d7}, 30 days: {d30}\n\
Retrieved memory:\n{memories}\n\nChoose buy, sell or hold.";
const POSITION_FIELDS: &str = "Position: {position} shares\nCash: {cash}\nEquity: {equity}\n\
Risk cues in memory: {risk_cues}";
const DIRECTION_SCHEMA: &str = "Reply with free text if you like, then exactly one fenced block:\n\
```json\n{\"action\": \"hold\", \"rationale\": \"...\"}\n```";

const SIZING_BODY: &str = "Date: {date}\nProposed action: {action}\nClose: {price}\n\
Price change over 1 day: {d1}, 7 days: {d7}, 30 days: {d30}\nRetrieved memory:\n{memories}\n\n\
Estimate the probability that the trade is profitable and the ratio of average gain to average loss.";
const RISK_FIELDS: &str = "Daily return volatility ({lookback} days): {volatility}\n\
Historical CVaR at {cvar_alpha}: {cvar}";
const SIZING_SCHEMA: &str = "Reply with free text if you like, then exactly one fenced block:\n\
```json\n{\"win_prob\": 0.5, \"payoff_ratio\": 1.0, \"rationale\": \"...\"}\n```";

const REFLECTION_BODY: &str = "Outcome record:\n{outcome}\n\nWrite a short lesson for future decisions.";
const REFLECTION_SCHEMA: &str = "Reply with free text if you like, then exactly one fenced block:\n\
```json\n{\"note\": \"...\"}\n```";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: String) -> Self {
        ChatMessage {
            role: role.to_string(),
            content,
        }
    }
}

/// Wire body of a chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

/// Sends one request and returns the assistant message text.
pub trait Transport {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Pulls `choices[0].message.content` out of a chat-completion response body.
pub fn extract_content(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::BadResponse("missing choices[0].message.content".into()))
}

#[cfg(feature = "http")]
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

#[cfg(feature = "http")]
impl HttpTransport {
    /// Reads the bearer token from the variable named in `api_key_env`.
    pub fn new(config: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

#[cfg(feature = "http")]
impl Transport for HttpTransport {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(request).expect("request serializes");
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Network(format!("HTTP {status}: {}", summarize(&text))));
        }
        extract_content(&text)
    }
}

/// Transport backed by a closure; useful as a scripted mock endpoint.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: FnMut(&ChatRequest) -> Result<String, TransportError>,
{
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        (self.0)(request)
    }
}

/// Answers with queued responses, then fails with a network error.
#[derive(Debug, Default)]
pub struct QueueTransport {
    pub responses: VecDeque<Result<String, TransportError>>,
    pub calls: usize,
}

impl QueueTransport {
    pub fn new(responses: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        QueueTransport {
            responses: responses.into_iter().collect(),
            calls: 0,
        }
    }
}

impl Transport for QueueTransport {
    fn send(&mut self, _: &ChatRequest) -> Result<String, TransportError> {
        self.calls += 1;
        self.responses
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Network("endpoint unavailable".into())))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("no fenced ```json block in response")]
    MissingBlock,
    #[error("invalid JSON in response block: {0}")]
    BadJson(String),
    #[error("field `{field}`: {problem}")]
    Field { field: &'static str, problem: String },
}

/// Body of the first ```json fenced block.
pub fn fenced_json(text: &str) -> Result<Value, SchemaError> {
    let start = text.find("```json").ok_or(SchemaError::MissingBlock)?;
    let body = &text[start + "```json".len()..];
    let end = body.find("```").ok_or(SchemaError::MissingBlock)?;
    serde_json::from_str(body[..end].trim()).map_err(|e| SchemaError::BadJson(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Analyst {
        summary: String,
        sentiment: f64,
        risk_cues: Vec<RiskCue>,
    },
    Direction {
        action: Direction,
        rationale: String,
    },
    Sizing {
        win_prob: f64,
        payoff_ratio: f64,
        rationale: String,
    },
    Reflection {
        note: String,
    },
}

fn field_f64(v: &Value, field: &'static str) -> Result<f64, SchemaError> {
    v.get(field)
        .and_then(Value::as_f64)
        .ok_or(SchemaError::Field {
            field,
            problem: "missing or not a number".into(),
        })
}

fn field_str(v: &Value, field: &'static str, required: bool) -> Result<String, SchemaError> {
    match v.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        None if !required => Ok(String::new()),
        _ => Err(SchemaError::Field {
            field,
            problem: "missing or not a string".into(),
        }),
    }
}

/// Validates a response against the role's schema. Out-of-range values are
/// errors, never clamped.
pub fn parse_payload(role: Role, text: &str) -> Result<Payload, SchemaError> {
    let v = fenced_json(text)?;
    match role {
        Role::Direction => {
            let raw = field_str(&v, "action", true)?;
            let action = Direction::parse(&raw).ok_or(SchemaError::Field {
                field: "action",
                problem: format!("`{raw}` is not buy, sell or hold"),
            })?;
            Ok(Payload::Direction {
                action,
                rationale: field_str(&v, "rationale", false)?,
            })
        }
        Role::Sizing => {
            let win_prob = field_f64(&v, "win_prob")?;
            if !(0.0..=1.0).contains(&win_prob) {
                return Err(SchemaError::Field {
                    field: "win_prob",
                    problem: format!("{win_prob} outside [0, 1]"),
                });
            }
            let payoff_ratio = field_f64(&v, "payoff_ratio")?;
            if !(payoff_ratio > 0.0 && payoff_ratio.is_finite()) {
                return Err(SchemaError::Field {
                    field: "payoff_ratio",
                    problem: format!("{payoff_ratio} is not positive"),
                });
            }
            Ok(Payload::Sizing {
                win_prob,
                payoff_ratio,
                rationale: field_str(&v, "rationale", false)?,
            })
        }
        Role::Analyst => {
            let sentiment = field_f64(&v, "sentiment")?;
            if !(-1.0..=1.0).contains(&sentiment) {
                return Err(SchemaError::Field {
                    field: "sentiment",
                    problem: format!("{sentiment} outside [-1, 1]"),
                });
            }
            let risk_cues: Vec<RiskCue> = match v.get("risk_cues") {
                Some(c) => serde_json::from_value(c.clone()).map_err(|e| SchemaError::Field {
                    field: "risk_cues",
                    problem: e.to_string(),
                })?,
                None => vec![RiskCue::None],
            };
            Ok(Payload::Analyst {
                summary: field_str(&v, "summary", false)?,
                sentiment,
                risk_cues,
            })
        }
        Role::Reflection => Ok(Payload::Reflection {
            note: field_str(&v, "note", true)?,
        }),
    }
}

/// One logical call: the request, the final response and how many retries it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentExchange {
    pub role: Role,
    pub request: ChatRequest,
    pub response: Option<String>,
    pub payload: Option<Value>,
    pub error: Option<String>,
    pub timestamp: String,
    pub retry_count: u32,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{role:?} call failed after {attempts} attempts: {last}")]
    Exhausted { role: Role, attempts: u32, last: String },
    #[error("replay diverged at exchange {index}: recorded prompt differs from the current one")]
    ReplayMismatch { index: usize },
    #[error("replay transcript exhausted after {0} exchanges")]
    TranscriptExhausted(usize),
    #[error("transcript write failed: {0}")]
    Io(String),
}

impl From<LlmError> for AgentError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Exhausted { .. } => AgentError::Degraded(e.to_string()),
            other => AgentError::Fatal(other.to_string()),
        }
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<AgentExchange>, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
    parse_transcript(&text)
}

pub fn parse_transcript(text: &str) -> Result<Vec<AgentExchange>, LlmError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| LlmError::Io(format!("transcript line {}: {e}", i + 1))))
        .collect()
}

enum Mode {
    Live {
        transport: Box<dyn Transport>,
        sink: Option<Box<dyn Write>>,
    },
    Replay {
        exchanges: VecDeque<AgentExchange>,
        consumed: usize,
    },
}

pub struct LlmClient {
    mode: Mode,
    config: LlmConfig,
    config_hash: String,
    clock: Box<dyn Fn() -> String>,
    sleep: Box<dyn Fn(u64)>,
    transcript: Vec<AgentExchange>,
}

pub type SharedClient = Rc<RefCell<LlmClient>>;

fn now_rfc3339() -> String {
    chrono::DateTime::<chrono::Utc>::from(std::time::SystemTime::now()).to_rfc3339()
}

impl LlmClient {
    pub fn live(transport: Box<dyn Transport>, config: LlmConfig, config_hash: String) -> Self {
        LlmClient {
            mode: Mode::Live { transport, sink: None },
            config,
            config_hash,
            clock: Box::new(now_rfc3339),
            sleep: Box::new(|ms| std::thread::sleep(std::time::Duration::from_millis(ms))),
            transcript: Vec::new(),
        }
    }

    pub fn replay(exchanges: Vec<AgentExchange>, config: LlmConfig, config_hash: String) -> Self {
        LlmClient {
            mode: Mode::Replay {
                exchanges: exchanges.into(),
                consumed: 0,
            },
            config,
            config_hash,
            clock: Box::new(now_rfc3339),
            sleep: Box::new(|_| {}),
            transcript: Vec::new(),
        }
    }

    /// Appends each exchange to `path` as one JSON line.
    pub fn record_to(mut self, path: &Path) -> Result<Self, LlmError> {
        let file = File::create(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        if let Mode::Live { sink, .. } = &mut self.mode {
            *sink = Some(Box::new(BufWriter::new(file)));
        }
        Ok(self)
    }

    pub fn with_clock(mut self, clock: impl Fn() -> String + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_sleep(mut self, sleep: impl Fn(u64) + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn shared(self) -> SharedClient {
        Rc::new(RefCell::new(self))
    }

    /// Exchanges made so far by this client.
    pub fn transcript(&self) -> &[AgentExchange] {
        &self.transcript
    }

    pub fn complete(
        &mut self,
        template: &PromptTemplate,
        values: &BTreeMap<String, String>,
    ) -> Result<(AgentExchange, Payload), LlmError> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            messages: template.render(values)?,
        };
        let role = template.role;
        match &mut self.mode {
            Mode::Replay { exchanges, consumed } => {
                let index = *consumed;
                let recorded = exchanges.pop_front().ok_or(LlmError::TranscriptExhausted(index))?;
                *consumed += 1;
                if recorded.role != role || recorded.request != request {
                    return Err(LlmError::ReplayMismatch { index });
                }
                self.transcript.push(recorded.clone());
                match (&recorded.response, &recorded.error) {
                    (Some(text), None) => {
                        let payload = parse_payload(role, text).map_err(|e| LlmError::Exhausted {
                            role,
                            attempts: recorded.retry_count + 1,
                            last: e.to_string(),
                        })?;
                        Ok((recorded, payload))
                    }
                    _ => Err(LlmError::Exhausted {
                        role,
                        attempts: recorded.retry_count + 1,
                        last: recorded.error.clone().unwrap_or_default(),
                    }),
                }
            }
            Mode::Live { transport, sink } => {
                let attempts = self.config.max_retries + 1;
                let mut last_err = String::new();
                let mut last_text = None;
                let mut outcome = None;
                for attempt in 0..attempts {
                    if attempt > 0 {
                        let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                        (self.sleep)(delay);
                    }
                    match transport.send(&request) {
                        Ok(text) => match parse_payload(role, &text) {
                            Ok(p) => {
                                outcome = Some((attempt, text, p));
                                break;
                            }
                            Err(e) => {
                                last_err = e.to_string();
                                last_text = Some(text);
                            }
                        },
                        Err(e) => last_err = e.to_string(),
                    }
                }
                let exchange = match &outcome {
                    Some((attempt, text, _)) => AgentExchange {
                        role,
                        request: request.clone(),
                        response: Some(text.clone()),
                        payload: fenced_json(text).ok(),
                        error: None,
                        timestamp: (self.clock)(),
                        retry_count: *attempt,
                        config_hash: self.config_hash.clone(),
                    },
                    None => AgentExchange {
                        role,
                        request: request.clone(),
                        response: last_text,
                        payload: None,
                        error: Some(last_err.clone()),
                        timestamp: (self.clock)(),
                        retry_count: attempts - 1,
                        config_hash: self.config_hash.clone(),
                    },
                };
                if let Some(w) = sink {
                    let line = serde_json::to_string(&exchange).expect("exchange serializes");
                    writeln!(w, "{line}")
                        .and_then(|_| w.flush())
                        .map_err(|e| LlmError::Io(e.to_string()))?;
                }
                self.transcript.push(exchange.clone());
                match outcome {
                    Some((_, _, payload)) => Ok((exchange, payload)),
                    None => Err(LlmError::Exhausted {
                        role,
                        attempts,
                        last: last_err,
                    }),
                }
            }
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.4}")
}

fn memory_lines(records: &[MemoryRecord]) -> String {
    if records.is_empty() {
        return "(none)".to_string();
    }
    records
        .iter()
        .map(|r| match r.report() {
            Some(rep) => format!(
                "- [{:?}] {} (sentiment {:.2}, cues {})",
                r.layer,
                rep.summary,
                rep.sentiment,
                cue_list(&rep.risk_cues)
            ),
            None => match &r.content {
                crate::memory::MemoryContent::Reflection(n) => format!("- [reflection] {}", n.text),
                crate::memory::MemoryContent::Report(_) => unreachable!(),
            },
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn cue_list(cues: &[RiskCue]) -> String {
    cues.iter()
        .map(|c| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(", ")
}

fn memory_cues(records: &[MemoryRecord]) -> String {
    let mut cues: Vec<RiskCue> = records
        .iter()
        .filter_map(|r| r.report())
        .flat_map(|r| r.risk_cues.iter().copied())
        .filter(|c| *c != RiskCue::None)
        .collect();
    cues.sort();
    cues.dedup();
    if cues.is_empty() {
        "none".into()
    } else {
        cue_list(&cues)
    }
}

fn context_slots(ctx: &PolicyContext) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("ticker".into(), ctx.ticker.to_string());
    m.insert("date".into(), ctx.date.to_string());
    m.insert("price".into(), fmt_num(ctx.price));
    m.insert("d1".into(), fmt_num(ctx.momentum.d1));
    m.insert("d7".into(), fmt_num(ctx.momentum.d7));
    m.insert("d30".into(), fmt_num(ctx.momentum.d30));
    m.insert("memories".into(), memory_lines(ctx.retrieved));
    if ctx.ablation.rs {
        m.insert("position".into(), ctx.account.position.to_string());
        m.insert("cash".into(), format!("{:.2}", ctx.account.cash));
        m.insert("equity".into(), format!("{:.2}", ctx.equity()));
        m.insert("risk_cues".into(), memory_cues(ctx.retrieved));
    }
    m
}

pub struct LlmAnalyzer {
    pub client: SharedClient,
}

impl Analyzer for LlmAnalyzer {
    fn analyze(&mut self, signal: &Signal, ablation: &AblationFlags) -> Result<AnalystReport, AgentError> {
        let template = PromptTemplate::for_role(Role::Analyst, ablation);
        let mut values = BTreeMap::new();
        values.insert("ticker".into(), if signal.ticker.is_empty() { "the market".into() } else { signal.ticker.clone() });
        values.insert("date".into(), signal.date().to_string());
        values.insert(
            "source_kind".into(),
            serde_json::to_value(signal.source_kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        );
        values.insert("text".into(), signal.text.clone());
        let (_, payload) = self.client.borrow_mut().complete(&template, &values)?;
        match payload {
            Payload::Analyst {
                summary,
                sentiment,
                risk_cues,
            } => Ok(AnalystReport {
                signal_ref: signal.origin_id.clone(),
                ticker: signal.ticker.clone(),
                source_kind: signal.source_kind,
                summary: if summary.is_empty() { summarize(&signal.text) } else { summary },
                sentiment,
                risk_cues: if ablation.rs { risk_cues } else { vec![RiskCue::None] },
                stability_class: StabilityClass::of(signal.source_kind),
                degraded: false,
            }),
            other => Err(AgentError::Degraded(format!("unexpected payload {other:?}"))),
        }
    }
}

pub struct LlmDirectionAgent {
    pub client: SharedClient,
}

impl DirectionAgent for LlmDirectionAgent {
    fn decide(&mut self, ctx: &PolicyContext) -> Result<DirectionChoice, AgentError> {
        let template = PromptTemplate::for_role(Role::Direction, &ctx.ablation);
        let (_, payload) = self.client.borrow_mut().complete(&template, &context_slots(ctx))?;
        match payload {
            Payload::Direction { action, rationale } => Ok(DirectionChoice { direction: action, rationale }),
            other => Err(AgentError::Degraded(format!("unexpected payload {other:?}"))),
        }
    }
}

pub struct LlmSizingAgent {
    pub client: SharedClient,
    pub lookback: usize,
    pub cvar_alpha: f64,
}

fn volatility(returns: &[f64]) -> f64 {
    if returns.len() < 2 {
        return 0.0;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl SizingAgent for LlmSizingAgent {
    fn estimate(&mut self, ctx: &PolicyContext, direction: Direction) -> Result<SizingEstimate, AgentError> {
        let template = PromptTemplate::for_role(Role::Sizing, &ctx.ablation);
        let mut values = context_slots(ctx);
        values.insert("action".into(), direction.as_str().into());
        let returns = ctx.view.returns(self.lookback);
        values.insert("lookback".into(), self.lookback.to_string());
        values.insert("volatility".into(), fmt_num(volatility(&returns)));
        values.insert("cvar_alpha".into(), self.cvar_alpha.to_string());
        values.insert("cvar".into(), fmt_num(cvar(&returns, self.cvar_alpha).unwrap_or(0.0)));
        let (_, payload) = self.client.borrow_mut().complete(&template, &values)?;
        match payload {
            Payload::Sizing {
                win_prob,
                payoff_ratio,
                rationale,
            } => Ok(SizingEstimate {
                win_prob,
                payoff_ratio,
                rationale,
            }),
            other => Err(AgentError::Degraded(format!("unexpected payload {other:?}"))),
        }
    }
}

pub struct LlmReflector {
    pub client: SharedClient,
    pub ticker: String,
    pub ablation: AblationFlags,
}

impl Reflector for LlmReflector {
    fn reflect(&mut self, record: &RewardRecord) -> Result<String, AgentError> {
        let template = PromptTemplate::for_role(Role::Reflection, &self.ablation);
        let mut values = BTreeMap::new();
        values.insert("ticker".into(), self.ticker.clone());
        values.insert("outcome".into(), describe(record));
        let (_, payload) = self.client.borrow_mut().complete(&template, &values)?;
        match payload {
            Payload::Reflection { note } => Ok(format!("{}; lesson: {note}", describe(record))),
            other => Err(AgentError::Degraded(format!("unexpected payload {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn cfg() -> LlmConfig {
        LlmConfig {
            max_retries: 2,
            backoff_ms: 0,
            ..LlmConfig::default()
        }
    }

    fn direction_reply(action: &str) -> String {
        format!("Momentum is mixed.\n```json\n{{\"action\": \"{action}\", \"rationale\": \"r\"}}\n```")
    }

    fn values_for(t: &PromptTemplate) -> BTreeMap<String, String> {
        t.required_slots().into_iter().map(|s| (s.clone(), format!("<{s}>"))).collect()
    }

    #[test]
    fn every_builtin_template_renders_completely() {
        for role in [Role::Analyst, Role::Direction, Role::Sizing, Role::Reflection] {
            for rs in [true, false] {
                for fip in [true, false] {
                    let flags = AblationFlags { rs, fip, ..Default::default() };
                    let t = PromptTemplate::for_role(role, &flags);
                    let msgs = t.render(&values_for(&t)).unwrap();
                    for m in &msgs {
                        assert!(slots(&m.content).is_empty(), "{role:?}: {}", m.content);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_slot_is_an_error() {
        let t = PromptTemplate::for_role(Role::Direction, &AblationFlags::default());
        let mut v = values_for(&t);
        v.remove("d30");
        assert_eq!(t.render(&v), Err(TemplateError::Unfilled("d30".into())));
    }

    #[test]
    fn ablation_changes_prompt_fields() {
        let full = PromptTemplate::for_role(Role::Sizing, &AblationFlags::default());
        let no_rs = PromptTemplate::for_role(Role::Sizing, &AblationFlags { rs: false, ..Default::default() });
        assert!(full.required_slots().contains(&"cvar".to_string()));
        assert!(!no_rs.required_slots().contains(&"position".to_string()));
        let no_fip = PromptTemplate::for_role(Role::Sizing, &AblationFlags { fip: false, ..Default::default() });
        assert!(no_fip.system.starts_with(PLAIN_PREAMBLE));
        assert!(full.system.starts_with(INSIGHT_PREAMBLE));
    }

    #[test]
    fn schemas_reject_out_of_range_values() {
        assert!(matches!(
            parse_payload(Role::Direction, &direction_reply("short")),
            Err(SchemaError::Field { field: "action", .. })
        ));
        let bad = "```json\n{\"win_prob\": 1.2, \"payoff_ratio\": 1}\n```";
        assert!(parse_payload(Role::Sizing, bad).is_err());
        let bad = "```json\n{\"win_prob\": 0.6, \"payoff_ratio\": 0}\n```";
        assert!(parse_payload(Role::Sizing, bad).is_err());
        assert_eq!(parse_payload(Role::Sizing, "no block"), Err(SchemaError::MissingBlock));
        let ok = "```json\n{\"win_prob\": 0.6, \"payoff_ratio\": 1.5}\n```";
        assert!(matches!(parse_payload(Role::Sizing, ok), Ok(Payload::Sizing { win_prob, .. }) if win_prob == 0.6));
        let cues = "```json\n{\"sentiment\": -0.5, \"risk_cues\": [\"downside_indicator\"]}\n```";
        assert!(matches!(parse_payload(Role::Analyst, cues), Ok(Payload::Analyst { risk_cues, .. }) if risk_cues == vec![RiskCue::DownsideIndicator]));
    }

    fn template_and_values() -> (PromptTemplate, BTreeMap<String, String>) {
        let t = PromptTemplate::for_role(Role::Direction, &AblationFlags::default());
        let v = values_for(&t);
        (t, v)
    }

    #[test]
    fn valid_payload_needs_no_retry() {
        let (t, v) = template_and_values();
        let q = QueueTransport::new([Ok(direction_reply("buy"))]);
        let mut c = LlmClient::live(Box::new(q), cfg(), "h".into());
        let (ex, p) = c.complete(&t, &v).unwrap();
        assert_eq!(ex.retry_count, 0);
        assert_eq!(p, Payload::Direction { action: Direction::Buy, rationale: "r".into() });
    }

    #[test]
    fn malformed_twice_then_valid_counts_two_retries() {
        let (t, v) = template_and_values();
        let q = QueueTransport::new([Ok("garbage".into()), Ok(direction_reply("maybe")), Ok(direction_reply("sell"))]);
        let slept = Rc::new(RefCell::new(Vec::new()));
        let s2 = slept.clone();
        let config = LlmConfig { backoff_ms: 100, ..cfg() };
        let mut c = LlmClient::live(Box::new(q), config, "h".into()).with_sleep(move |ms| s2.borrow_mut().push(ms));
        let (ex, _) = c.complete(&t, &v).unwrap();
        assert_eq!(ex.retry_count, 2);
        assert_eq!(*slept.borrow(), vec![100, 200]);
    }

    #[test]
    fn endpoint_down_fails_softly() {
        let (t, v) = template_and_values();
        let mut c = LlmClient::live(Box::new(QueueTransport::default()), cfg(), "h".into());
        let err = c.complete(&t, &v).unwrap_err();
        assert!(matches!(err, LlmError::Exhausted { attempts: 3, .. }));
        assert!(!AgentError::from(err).is_fatal());
        assert_eq!(c.transcript().len(), 1);
        assert!(c.transcript()[0].error.is_some());
    }

    #[test]
    fn replay_answers_in_order_and_detects_divergence() {
        let (t, v) = template_and_values();
        let q = QueueTransport::new([Ok(direction_reply("buy")), Ok(direction_reply("hold"))]);
        let mut live = LlmClient::live(Box::new(q), cfg(), "h".into()).with_clock(|| "T".into());
        live.complete(&t, &v).unwrap();
        live.complete(&t, &v).unwrap();
        let recorded = live.transcript().to_vec();

        let mut replay = LlmClient::replay(recorded.clone(), cfg(), "h".into());
        assert!(matches!(replay.complete(&t, &v).unwrap().1, Payload::Direction { action: Direction::Buy, .. }));
        assert!(matches!(replay.complete(&t, &v).unwrap().1, Payload::Direction { action: Direction::Hold, .. }));
        assert_eq!(replay.complete(&t, &v).unwrap_err(), LlmError::TranscriptExhausted(2));

        let mut changed = v.clone();
        changed.insert("d1".into(), "9.9".into());
        let mut replay = LlmClient::replay(recorded, cfg(), "h".into());
        let err = replay.complete(&t, &changed).unwrap_err();
        assert_eq!(err, LlmError::ReplayMismatch { index: 0 });
        assert!(AgentError::from(err).is_fatal());

        let mut empty = LlmClient::replay(vec![], cfg(), "h".into());
        assert!(AgentError::from(empty.complete(&t, &v).unwrap_err()).is_fatal());
    }

    #[test]
    fn transcript_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let (t, v) = template_and_values();
        let calls = Rc::new(Cell::new(0));
        let c2 = calls.clone();
        let transport = FnTransport(move |_: &ChatRequest| {
            c2.set(c2.get() + 1);
            Ok(direction_reply("buy"))
        });
        let mut live = LlmClient::live(Box::new(transport), cfg(), "h".into()).record_to(&path).unwrap();
        live.complete(&t, &v).unwrap();
        drop(live);
        let back = read_transcript(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(calls.get(), 1);
        assert_eq!(back[0].request.temperature, 0.7);
        assert_eq!(back[0].payload.as_ref().unwrap()["action"], "buy");
    }

    #[test]
    fn chat_completion_envelope() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hi");
        assert!(extract_content("{}").is_err());
    }
}
