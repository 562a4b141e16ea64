//! Raw log input: CSV (with a header row) or JSON lines, each record holding
//! `trace_id`, `event_type` and `timestamp`. Timestamps are RFC 3339 strings
//! or integer milliseconds.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Timestamp;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub trace_id: String,
    pub event_type: String,
    pub ts: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Csv,
    JsonLines,
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct InputError {
    pub line: u64,
    pub message: String,
}

#[derive(Deserialize)]
struct RawRecord {
    trace_id: serde_json::Value,
    event_type: String,
    timestamp: serde_json::Value,
}

fn parse_timestamp(v: &serde_json::Value) -> Result<Timestamp, String> {
    match v {
        serde_json::Value::Number(n) => n.as_i64().ok_or_else(|| format!("timestamp {n} is not an integer")),
        serde_json::Value::String(s) => parse_timestamp_str(s),
        other => Err(format!("unsupported timestamp {other}")),
    }
}

pub fn parse_timestamp_str(s: &str) -> Result<Timestamp, String> {
    let s = s.trim();
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp_millis())
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

fn trace_id_string(v: serde_json::Value) -> Result<String, String> {
    match v {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("unsupported trace_id {other}")),
    }
}

/// Parses a whole log. The first malformed record aborts with its line
/// number (1-based, counting the CSV header).
pub fn parse_log(reader: impl Read, format: InputFormat) -> Result<Vec<LogRecord>, InputError> {
    match format {
        InputFormat::Csv => parse_csv(reader),
        InputFormat::JsonLines => parse_jsonl(reader),
    }
}

fn parse_csv(reader: impl Read) -> Result<Vec<LogRecord>, InputError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| InputError { line: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| InputError { line: 1, message: format!("missing column `{name}`") })
    };
    let (ci, ce, ct) = (col("trace_id")?, col("event_type")?, col("timestamp")?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| InputError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let (trace_id, event_type) = (field(ci), field(ce));
        if trace_id.is_empty() || event_type.is_empty() {
            return Err(InputError { line, message: "empty trace_id or event_type".into() });
        }
        let ts = parse_timestamp_str(field(ct)).map_err(|message| InputError { line, message })?;
        out.push(LogRecord { trace_id: trace_id.into(), event_type: event_type.into(), ts });
    }
    Ok(out)
}

fn parse_jsonl(reader: impl Read) -> Result<Vec<LogRecord>, InputError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let err = |message: String| InputError { line: line_no, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let ts = parse_timestamp(&raw.timestamp).map_err(err)?;
        let trace_id = trace_id_string(raw.trace_id).map_err(err)?;
        out.push(LogRecord { trace_id, event_type: raw.event_type, ts });
    }
    Ok(out)
}

/// Writes records as CSV with the header expected by [`parse_log`].
pub fn write_csv(records: &[LogRecord], writer: impl std::io::Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trace_id", "event_type", "timestamp"])?;
    for r in records {
        w.write_record([r.trace_id.as_str(), r.event_type.as_str(), &r.ts.to_string()])?;
    }
    w.flush()
}
