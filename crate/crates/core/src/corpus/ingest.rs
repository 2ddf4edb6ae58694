use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde_json::Value;

use super::{CrashReport, Corpus};
use crate::error::{Error, Result};
use crate::trace::{parse_with_language, Language, StackTrace};

/// Reads a line-delimited corpus file.
///
/// Each non-blank line is a JSON object with `report_id`, `creation_ts`
/// (ISO-8601 text or epoch seconds), `bucket_id` and `traces`. A trace is
/// either raw crash text or an array of frame names.
pub fn ingest_corpus(path: &Path, language: Language) -> Result<Corpus> {
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file), path, language)
}

pub fn ingest_reader<R: BufRead>(reader: R, path: &Path, language: Language) -> Result<Corpus> {
    let mut pending = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let report_id = string_field(&value, &["report_id"]).ok_or_else(|| err("missing `report_id`".into()))?;
        let bucket_id = string_field(&value, &["bucket_id"]).ok_or_else(|| err("missing `bucket_id`".into()))?;
        let ts = value
            .get("creation_ts")
            .ok_or_else(|| err("missing `creation_ts`".into()))
            .and_then(|v| parse_timestamp(v).map_err(err))?;
        let traces = match value.get("traces") {
            Some(Value::Array(items)) => parse_traces(items, language).map_err(err)?,
            _ => return Err(err("`traces` must be an array".into())),
        };
        if traces.is_empty() {
            return Err(err(format!("report `{report_id}` has no parseable stack trace")));
        }
        pending.push((report_id, ts, bucket_id, traces));
    }
    assemble(language, pending)
}

fn assemble(language: Language, pending: Vec<(String, i64, String, Vec<StackTrace>)>) -> Result<Corpus> {
    let min_ts = pending.iter().map(|p| p.1).min().unwrap_or(0);
    let reports = pending
        .into_iter()
        .map(|(report_id, ts, bucket_id, traces)| {
            let day = (ts - min_ts).div_euclid(86_400);
            CrashReport {
                report_id,
                timestamp_day: u32::try_from(day).unwrap_or(u32::MAX),
                bucket_id,
                traces,
            }
        })
        .collect();
    Corpus::new(language, reports)
}

fn string_field(value: &Value, names: &[&str]) -> Option<String> {
    names.iter().find_map(|name| match value.get(*name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn parse_traces(items: &[Value], language: Language) -> std::result::Result<Vec<StackTrace>, String> {
    let mut traces = Vec::new();
    for item in items {
        match item {
            Value::String(text) => traces.extend(parse_with_language(text, language)),
            Value::Array(frames) => {
                let names = frames
                    .iter()
                    .map(|f| f.as_str().map(str::to_string).ok_or("frame names must be strings"))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let trace = StackTrace::from_frame_names(language, &names);
                if !trace.is_empty() {
                    traces.push(trace);
                }
            }
            _ => return Err("each trace must be text or a list of frame names".into()),
        }
    }
    Ok(traces)
}

/// Epoch seconds from ISO-8601 text or a number. Numbers above 10^11 are
/// taken to be milliseconds.
fn parse_timestamp(value: &Value) -> std::result::Result<i64, String> {
    match value {
        Value::Number(n) => {
            let raw = n
                .as_i64()
                .or_else(|| n.as_f64().map(|f| f as i64))
                .ok_or_else(|| format!("bad timestamp {n}"))?;
            Ok(if raw.abs() > 100_000_000_000 { raw / 1000 } else { raw })
        }
        Value::String(s) => parse_timestamp_text(s.trim()),
        other => Err(format!("bad timestamp {other}")),
    }
}

fn parse_timestamp_text(s: &str) -> std::result::Result<i64, String> {
    if let Ok(n) = s.parse::<i64>() {
        return parse_timestamp(&Value::from(n));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S %z"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight is valid").and_utc().timestamp());
    }
    Err(format!("unrecognized timestamp `{s}`"))
}

/// Converts a public crash dump (a JSON array, or one JSON object per line)
/// into a corpus.
///
/// Field names follow the common dataset conventions: `bug_id`/`id`,
/// `creation_ts`/`timestamp`, `dup_id`, and `stacktrace`, which is one
/// object or a list of objects holding `exception` and `frames`. Frames may be
/// strings or objects with a `function` field. Buckets are the roots of the
/// `dup_id` chains; a report without `dup_id` starts its own bucket.
pub fn convert_public_dump<R: Read>(mut reader: R, language: Language) -> Result<Corpus> {
    let path = PathBuf::from("<dump>");
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let records: Vec<Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };

    let mut parent: HashMap<String, String> = HashMap::new();
    let mut pending = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            message,
        };
        let id = string_field(record, &["bug_id", "id", "report_id"]).ok_or_else(|| err("missing id".into()))?;
        let ts = record
            .get("creation_ts")
            .or_else(|| record.get("timestamp"))
            .ok_or_else(|| err("missing timestamp".into()))
            .and_then(|v| parse_timestamp(v).map_err(err))?;
        if let Some(dup) = string_field(record, &["dup_id"]).filter(|d| !d.is_empty() && d != &id) {
            parent.insert(id.clone(), dup);
        }
        let stacks: Vec<&Value> = match record.get("stacktrace").or_else(|| record.get("stacktraces")) {
            Some(Value::Array(items)) => items.iter().collect(),
            Some(obj @ Value::Object(_)) => vec![obj],
            _ => Vec::new(),
        };
        let traces: Vec<StackTrace> = stacks
            .into_iter()
            .filter_map(|stack| dump_trace(stack, language))
            .collect();
        if traces.is_empty() {
            log::debug!("skipping report {id}: no frames");
            continue;
        }
        pending.push((id, ts, traces));
    }

    let root = |id: &str| {
        let mut current = id.to_string();
        let mut steps = 0;
        while let Some(next) = parent.get(&current) {
            current = next.clone();
            steps += 1;
            if steps > parent.len() {
                break; // cycle
            }
        }
        current
    };
    let pending = pending
        .into_iter()
        .map(|(id, ts, traces)| {
            let bucket = root(&id);
            (id, ts, bucket, traces)
        })
        .collect();
    assemble(language, pending)
}

fn dump_trace(stack: &Value, language: Language) -> Option<StackTrace> {
    let frames = stack.get("frames")?.as_array()?;
    let names: Vec<String> = frames
        .iter()
        .filter_map(|f| match f {
            Value::String(s) => Some(s.clone()),
            Value::Object(_) => f.get("function").and_then(Value::as_str).map(str::to_string),
            _ => None,
        })
        .filter(|n| !n.is_empty())
        .collect();
    let mut trace = StackTrace::from_frame_names(language, &names);
    trace.exception_header = match stack.get("exception") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items.first().and_then(Value::as_str).unwrap_or("").to_string(),
        _ => String::new(),
    };
    (!trace.is_empty()).then_some(trace)
}
