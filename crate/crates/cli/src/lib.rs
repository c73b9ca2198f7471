//! Command implementations behind the `finrs` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use finrs_core::backtest::{run, Agents, BacktestError, DataBundle};
use finrs_core::bundle::{write_bundle, BundleError};
use finrs_core::config::{AgentKind, AnalyzerKind, ConfigError, PolicyKind, RunConfig};
use finrs_core::llm::{read_transcript, HttpTransport, LlmClient, LlmError, SharedClient};
use finrs_core::market_data::{load_filings, load_news, load_ohlcv, DataError};
use finrs_core::metrics::PerformanceSummary;
use finrs_core::perception::Lexicon;
use finrs_core::report::{load_rows, render, ReportError, ReportFormat, ReportRow};
use finrs_core::sweep::{ablate, parse_axes, variants, write_sweep};

#[derive(Debug, Parser)]
#[command(name = "finrs", version, about = "Risk-sensitive trading backtests with layered memory and reward reflection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one backtest and write its result bundle.
    Backtest(BacktestArgs),
    /// Run the full config and each single-axis-off variant.
    Ablate(AblateArgs),
    /// Tabulate metrics from existing result bundles.
    Report(ReportArgs),
    /// Parse data files and report problems without running anything.
    ValidateData(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Bundle directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Append every LLM exchange to this transcript file.
    #[arg(long, conflicts_with = "replay_transcript")]
    pub record_transcript: Option<PathBuf>,
    /// Answer LLM calls from a recorded transcript instead of the endpoint.
    #[arg(long)]
    pub replay_transcript: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated subset of rs, fip, mn, mtr, or `all`.
    #[arg(long, default_value = "all")]
    pub axes: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result bundle directories, one table row each.
    pub bundles: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub ohlcv: PathBuf,
    #[arg(long)]
    pub news: Option<PathBuf>,
    #[arg(long)]
    pub filings: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Report(ReportError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 2 for usage problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Report(ReportError::NoBundles) => 2,
            _ => 1,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Report(e)
    }
}

fn uses_llm(config: &RunConfig) -> bool {
    config.run.analyzer == AnalyzerKind::Llm
        || (config.run.agents == AgentKind::Llm && config.run.policy == PolicyKind::Finrs)
}

fn live_client(config: &RunConfig) -> LlmClient {
    if std::env::var(&config.llm.api_key_env).map_or(true, |k| k.is_empty()) {
        eprintln!(
            "warning: {} is not set; calling {} without credentials",
            config.llm.api_key_env, config.llm.endpoint
        );
    }
    if config.llm.endpoint.is_empty() {
        eprintln!("warning: llm.endpoint is empty; every agent call will degrade to its fallback");
    }
    LlmClient::live(Box::new(HttpTransport::new(&config.llm)), config.llm.clone(), config.hash())
}

/// The endpoint client for a single run, if the config selects LLM agents.
pub fn client_for(
    config: &RunConfig,
    record: Option<&Path>,
    replay: Option<&Path>,
) -> Result<Option<SharedClient>, CliError> {
    if let Some(path) = replay {
        let exchanges = read_transcript(path)?;
        return Ok(Some(LlmClient::replay(exchanges, config.llm.clone(), config.hash()).shared()));
    }
    if !uses_llm(config) {
        if record.is_some() {
            eprintln!("warning: config uses no LLM agents; the transcript will stay empty");
            if let Some(p) = record {
                std::fs::write(p, "").map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?;
            }
        }
        return Ok(None);
    }
    let mut client = live_client(config);
    if let Some(path) = record {
        client = client.record_to(path)?;
    }
    Ok(Some(client.shared()))
}

fn summary_table(name: &str, summary: &PerformanceSummary, format: ReportFormat) -> String {
    render(&[ReportRow::new(name, summary)], format)
}

pub fn cmd_backtest(args: &BacktestArgs) -> Result<String, CliError> {
    let config = RunConfig::load(&args.config)?;
    let data = DataBundle::load(&config)?;
    let client = client_for(&config, args.record_transcript.as_deref(), args.replay_transcript.as_deref())?;
    let mut agents = Agents::build(&config, &data.lexicon, client)?;
    let result = run(&config, &data, &mut agents, None)?;
    write_bundle(&args.out, &result, &config)?;
    let name = args
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| result.policy.clone());
    Ok(summary_table(&name, &result.summary, args.format))
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<String, CliError> {
    let axes = parse_axes(&args.axes).map_err(CliError::Usage)?;
    if axes.is_empty() {
        return Err(CliError::Usage("--axes names no ablation axis".into()));
    }
    let base = RunConfig::load(&args.config)?;
    let data = DataBundle::load(&base)?;
    let vs = variants(&base, &axes);
    let results = ablate(&vs, &data, |config: &RunConfig, lexicon: &Lexicon| {
        let client = uses_llm(config).then(|| live_client(config).shared());
        Agents::build(config, lexicon, client)
    })
    .into_iter()
    .zip(&vs)
    .map(|(r, v)| r.map_err(|e| CliError::Other(format!("variant {}: {e}", v.name))))
    .collect::<Result<Vec<_>, _>>()?;
    Ok(write_sweep(&args.out, &vs, &results, args.format)?)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    if args.bundles.is_empty() {
        return Err(CliError::Usage("report needs at least one bundle directory".into()));
    }
    Ok(render(&load_rows(&args.bundles)?, args.format))
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<String, CliError> {
    let series = load_ohlcv(&args.ohlcv)?;
    let dates = series.dates();
    let mut out = format!(
        "{}: {} bars for {} from {} to {}\n",
        args.ohlcv.display(),
        series.len(),
        series.ticker,
        dates[0],
        dates[dates.len() - 1]
    );
    let widest = dates.windows(2).map(|w| (w[1] - w[0]).num_days()).max().unwrap_or(0);
    out.push_str(&format!("  widest calendar gap: {widest} days\n"));
    if let Some(p) = &args.news {
        let feed = load_news(p)?;
        out.push_str(&format!(
            "{}: {} items, {} skipped lines\n",
            p.display(),
            feed.items.len(),
            feed.warnings
        ));
    }
    if let Some(p) = &args.filings {
        let feed = load_filings(p)?;
        out.push_str(&format!(
            "{}: {} documents, {} skipped lines\n",
            p.display(),
            feed.items.len(),
            feed.warnings
        ));
    }
    if let Some(p) = &args.lexicon {
        let lex = Lexicon::load(p).map_err(|e| CliError::Other(e.to_string()))?;
        out.push_str(&format!(
            "{}: {} positive, {} negative, {} macro terms\n",
            p.display(),
            lex.positive.len(),
            lex.negative.len(),
            lex.macro_keywords.len()
        ));
    }
    Ok(out)
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Backtest(a) => cmd_backtest(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
        Command::ValidateData(a) => cmd_validate(a),
    }
}
