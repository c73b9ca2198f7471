use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use serde_json::Value;

const BUNDLE_FILES: [&str; 6] = [
    "equity.csv",
    "trades.jsonl",
    "rewards.csv",
    "memory.jsonl",
    "summary.json",
    "config.json",
];

fn finrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finrs"))
        .args(args)
        .env_remove("FINRS_API_KEY")
        .output()
        .expect("binary runs")
}

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The example config with data paths made absolute, plus `edit` applied.
fn write_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(repo().join("docs/config.example.toml")).unwrap();
    let data = repo().join("data/sample").canonicalize().unwrap();
    let text = edit(text.replace("../data/sample", data.to_str().unwrap()));
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    BUNDLE_FILES
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))))
        .collect()
}

#[test]
fn backtest_writes_a_complete_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t);
    let out = tmp.path().join("run");
    let o = finrs(&["backtest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("name,cr_pct,sharpe,mdd_pct\nrun,"));
    for f in BUNDLE_FILES {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rewards = std::fs::read_to_string(out.join("rewards.csv")).unwrap();
    assert!(rewards.starts_with("t,position_before,position_after,m_s,m_m,m_l,total,reward,case,benchmark_pnl\n"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ticker"], "SYN");
    assert_eq!(summary["days"], 261);
}

#[test]
fn repeated_backtests_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t.replace("policy = \"finrs\"", "policy = \"random\""));
    let mut bundles = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = finrs(&["backtest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        bundles.push(read_bundle(&out));
    }
    assert_eq!(bundles[0], bundles[1]);
}

#[test]
fn missing_data_file_is_named_in_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t.replace("SYN.csv", "NOPE.csv"));
    let out = tmp.path().join("run");
    let o = finrs(&["backtest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("NOPE.csv"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_ablation_value_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t.replace("mn = true", "mn = \"sometimes\""));
    let o = finrs(&["backtest", "--config", config.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("config.toml"), "{}", stderr(&o));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t);
    let all = tmp.path().join("all");
    let o = finrs(&["ablate", "--config", config.to_str().unwrap(), "--out", all.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["rs_off", "fip_off", "mn_off", "mtr_off", "full"]);
    assert_eq!(std::fs::read_to_string(all.join("report.csv")).unwrap(), table);
    for n in &names {
        assert!(all.join(n).join("summary.json").is_file());
    }

    let again = tmp.path().join("again");
    let o = finrs(&["ablate", "--config", config.to_str().unwrap(), "--out", again.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&o), table);
    assert_eq!(read_bundle(&all.join("full")), read_bundle(&again.join("full")));

    let one = tmp.path().join("one");
    let o = finrs(&["ablate", "--config", config.to_str().unwrap(), "--axes", "mtr", "--out", one.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = finrs(&["ablate", "--config", config.to_str().unwrap(), "--axes", "rs,vibes", "--out", one.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vibes"));
}

#[test]
fn report_recomputes_from_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| t);
    let sweep = tmp.path().join("sweep");
    assert!(finrs(&["ablate", "--config", config.to_str().unwrap(), "--axes", "rs", "--out", sweep.to_str().unwrap()])
        .status
        .success());
    let dirs = [sweep.join("rs_off"), sweep.join("full")];
    let args: Vec<&str> = dirs.iter().map(|d| d.to_str().unwrap()).collect();

    let o = finrs(&[&["report", "--format", "csv"], args.as_slice()].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("name,cr_pct,sharpe,mdd_pct\nrs_off,"));

    let o = finrs(&[&["report", "--format", "json"], args.as_slice()].concat());
    let rows: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    let o = finrs(&[&["report"], args.as_slice()].concat());
    assert!(stdout(&o).starts_with("| Name | CR% | SR | MDD% |"));

    // A tampered equity curve no longer matches the stored summary.
    let equity = dirs[1].join("equity.csv");
    let text = std::fs::read_to_string(&equity).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let mut cols: Vec<String> = lines[last].split(',').map(String::from).collect();
    cols[5] = "1.0".into();
    lines[last] = cols.join(",");
    std::fs::write(&equity, lines.join("\n") + "\n").unwrap();
    let o = finrs(&[&["report"], args.as_slice()].concat());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_without_bundles_is_a_usage_error() {
    let o = finrs(&["report", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = finrs(&["report", "--format", "xml", "somewhere"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_data_summarizes_the_sample() {
    let data = repo().join("data/sample");
    let o = finrs(&[
        "validate-data",
        "--ohlcv",
        data.join("SYN.csv").to_str().unwrap(),
        "--news",
        data.join("news.jsonl").to_str().unwrap(),
        "--filings",
        data.join("filings.jsonl").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("390 bars"), "{text}");
    assert!(text.contains("60 items"), "{text}");
    assert!(text.contains("6 documents"), "{text}");

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "Date,Open,High,Low,Close,Volume\n2024-01-02,10,9,8,9,100\n").unwrap();
    let o = finrs(&["validate-data", "--ohlcv", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.csv"));
}

struct Mock {
    url: String,
    auth: Arc<Mutex<Vec<String>>>,
}

/// Chat-completion endpoint on a local port. Records Authorization headers.
fn mock_endpoint() -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let auth = Arc::new(Mutex::new(Vec::new()));
    let seen = auth.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line.trim().is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") {
                    seen.lock().unwrap().push(line.trim().to_string());
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let system = request["messages"][0]["content"].as_str().unwrap_or_default();
            let user = request["messages"][1]["content"].as_str().unwrap_or_default();
            let payload = if system.contains("analyst") {
                serde_json::json!({"summary": "s", "sentiment": 0.3, "risk_cues": ["none"]})
            } else if system.contains("direction") {
                let up = user.contains("1 day: ") && !user.contains("1 day: -");
                serde_json::json!({"action": if up { "buy" } else { "sell" }, "rationale": "r"})
            } else if system.contains("edge") {
                serde_json::json!({"win_prob": 0.6, "payoff_ratio": 1.5})
            } else {
                serde_json::json!({"note": "n"})
            };
            let content = format!("```json\n{payload}\n```");
            let envelope = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{envelope}",
                envelope.len()
            );
        }
    });
    Mock { url, auth }
}

#[test]
fn recorded_transcript_replays_to_the_same_bundle() {
    let mock = mock_endpoint();
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), |t| {
        t.replace("start = \"2024-07-01\"", "start = \"2025-06-02\"")
            .replace("analyzer = \"lexicon\"", "analyzer = \"llm\"")
            .replace("agents = \"rules\"", "agents = \"llm\"")
            .replace("http://localhost:8080/v1/chat/completions", &mock.url)
            .replace("backoff_ms = 500", "backoff_ms = 0")
    });
    let transcript = tmp.path().join("transcript.jsonl");
    let recorded = tmp.path().join("recorded");
    let o = Command::new(env!("CARGO_BIN_EXE_finrs"))
        .args(["backtest", "--config", config.to_str().unwrap(), "--out", recorded.to_str().unwrap()])
        .args(["--record-transcript", transcript.to_str().unwrap()])
        .env("FINRS_API_KEY", "sk-test-123")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let auth = mock.auth.lock().unwrap().clone();
    assert!(!auth.is_empty() && auth.iter().all(|h| h.eq_ignore_ascii_case("authorization: bearer sk-test-123")), "{auth:?}");
    let log = std::fs::read_to_string(&transcript).unwrap();
    assert!(log.lines().count() > 20);
    assert!(!log.contains("sk-test-123"));
    assert!(!std::fs::read_to_string(recorded.join("config.json")).unwrap().contains("sk-test-123"));
    let trades = std::fs::read_to_string(recorded.join("trades.jsonl")).unwrap();
    assert!(!trades.is_empty());

    let replayed = tmp.path().join("replayed");
    let o = finrs(&[
        "backtest",
        "--config",
        config.to_str().unwrap(),
        "--out",
        replayed.to_str().unwrap(),
        "--replay-transcript",
        transcript.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_bundle(&recorded), read_bundle(&replayed));

    let o = finrs(&[
        "backtest",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--record-transcript",
        "a.jsonl",
        "--replay-transcript",
        "b.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_degrades_to_holds() {
    let tmp = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = write_config(tmp.path(), |t| {
        t.replace("start = \"2024-07-01\"", "start = \"2025-06-16\"")
            .replace("agents = \"rules\"", "agents = \"llm\"")
            .replace("http://localhost:8080", &format!("http://127.0.0.1:{port}"))
            .replace("backoff_ms = 500", "backoff_ms = 0")
            .replace("max_retries = 2", "max_retries = 0")
    });
    let out = tmp.path().join("run");
    let o = finrs(&["backtest", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("FINRS_API_KEY is not set"));
    assert_eq!(std::fs::read_to_string(out.join("trades.jsonl")).unwrap(), "");
}
