//! Turns parsed stack traces into embedding-ready passages.
//!
//! The pipeline is fixed: consecutive-duplicate removal, top-N sampling,
//! per-frame cleaning, then positional coding. Each frame becomes one
//! sentence prefixed with `f<k>` (1-based depth); a Java exception class,
//! when present, becomes sentence zero with the marker `exc`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::trace::{Language, StackFrame, StackTrace};

pub const HEADER_MARKER: &str = "exc";
pub const DEFAULT_STRIP_PREFIXES: [&str; 3] = ["IA__", "_GI_", "__GI_"];

/// How much of a Java frame survives cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TrimLevel {
    /// Full `package.Class.method`.
    #[default]
    L0,
    /// Method dropped.
    L1,
    /// Method and class dropped.
    L2,
}

impl fmt::Display for TrimLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrimLevel::L0 => "l0",
            TrimLevel::L1 => "l1",
            TrimLevel::L2 => "l2",
        })
    }
}

impl FromStr for TrimLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l0" | "0" => Ok(TrimLevel::L0),
            "l1" | "1" => Ok(TrimLevel::L1),
            "l2" | "2" => Ok(TrimLevel::L2),
            other => Err(Error::config(format!("unknown trim level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub top_n: usize,
    pub trim_level: TrimLevel,
    pub language: Language,
    pub lowercase: bool,
    /// Render the Java exception class as sentence zero.
    pub include_header: bool,
    /// Debugger prefixes removed from C/C++ function names, longest first.
    pub strip_prefixes: Vec<String>,
}

impl PreprocessConfig {
    pub fn new(language: Language) -> Self {
        PreprocessConfig {
            top_n: 10,
            trim_level: TrimLevel::L0,
            language,
            lowercase: true,
            include_header: true,
            strip_prefixes: DEFAULT_STRIP_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::config("top_n must be at least 1"));
        }
        if self.trim_level != TrimLevel::L0 && self.language != Language::Java {
            return Err(Error::config(format!(
                "trim level {} only applies to java traces",
                self.trim_level
            )));
        }
        Ok(())
    }
}

/// Identifies which trace of which report a passage was rendered from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceKey {
    pub report_id: String,
    pub trace_index: usize,
}

impl TraceKey {
    pub fn new(report_id: impl Into<String>, trace_index: usize) -> Self {
        TraceKey {
            report_id: report_id.into(),
            trace_index,
        }
    }

    pub fn parse(key: &str) -> Option<TraceKey> {
        let (report_id, index) = key.rsplit_once('#')?;
        Some(TraceKey::new(report_id, index.parse().ok()?))
    }
}

impl fmt::Display for TraceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.report_id, self.trace_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
    pub frame_count: usize,
    pub source: TraceKey,
}

/// Collapses runs of frames naming the same subroutine under the same path.
pub fn remove_consecutive_duplicates(trace: &StackTrace) -> StackTrace {
    let mut frames: Vec<StackFrame> = Vec::with_capacity(trace.frames.len());
    for frame in &trace.frames {
        if frames.last().is_some_and(|last| last.same_subroutine(frame)) {
            continue;
        }
        frames.push(frame.clone());
    }
    StackTrace::new(trace.language, trace.exception_header.clone(), frames)
}

pub fn take_top_frames(trace: &StackTrace, n: usize) -> StackTrace {
    let frames = trace.frames.iter().filter(|f| f.ordinal < n).cloned().collect();
    StackTrace::new(trace.language, trace.exception_header.clone(), frames)
}

/// Cleans one frame into space-separated tokens.
pub fn clean_frame(frame: &StackFrame, config: &PreprocessConfig) -> String {
    let text = match config.language {
        Language::Java => {
            let path = frame.qualified_path.as_str();
            match config.trim_level {
                TrimLevel::L0 if path.is_empty() => frame.function.clone(),
                TrimLevel::L0 => format!("{path}.{}", frame.function),
                TrimLevel::L1 => path.to_string(),
                TrimLevel::L2 => path.rsplit_once('.').map(|(pkg, _)| pkg).unwrap_or("").to_string(),
            }
        }
        Language::Cpp => {
            let function = strip_debugger_prefix(&frame.function, &config.strip_prefixes);
            if frame.qualified_path.is_empty() {
                function.to_string()
            } else {
                format!("{} {}", frame.qualified_path, function)
            }
        }
    };
    clean_text(&text, config.lowercase)
}

fn strip_debugger_prefix<'a>(function: &'a str, prefixes: &[String]) -> &'a str {
    let mut sorted: Vec<&String> = prefixes.iter().collect();
    sorted.sort_by_key(|p| std::cmp::Reverse(p.len()));
    sorted
        .into_iter()
        .find_map(|p| function.strip_prefix(p.as_str()))
        .unwrap_or(function)
}

/// Replaces every non-alphanumeric character with a space, drops numeric and
/// hex-address tokens, and collapses whitespace.
pub fn clean_text(text: &str, lowercase: bool) -> String {
    let mapped: String = text
        .chars()
        .map(|c| match c {
            c if c.is_ascii_alphanumeric() && lowercase => c.to_ascii_lowercase(),
            c if c.is_ascii_alphanumeric() => c,
            _ => ' ',
        })
        .collect();
    mapped
        .split_whitespace()
        .filter(|tok| !is_numeric_noise(tok))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_numeric_noise(token: &str) -> bool {
    if token.chars().all(|c| c.is_ascii_digit()) {
        return true;
    }
    let lower = token.to_ascii_lowercase();
    lower
        .strip_prefix("0x")
        .is_some_and(|hex| !hex.is_empty() && hex.chars().all(|c| c.is_ascii_hexdigit()))
}

/// The exception class of a `Class: message` header, cleaned.
fn clean_header(header: &str, lowercase: bool) -> String {
    let class = header.split_once(':').map(|(c, _)| c).unwrap_or(header);
    clean_text(class, lowercase)
}

/// Renders a (deduplicated, truncated) trace as a positional-coded passage.
pub fn render_passage(trace: &StackTrace, config: &PreprocessConfig, source: TraceKey) -> Passage {
    let sentences: Vec<String> = trace.frames.iter().map(|f| clean_frame(f, config)).collect();
    let header = if config.include_header {
        clean_header(&trace.exception_header, config.lowercase)
    } else {
        String::new()
    };
    render_sentences(&header, &sentences, source)
}

fn render_sentences(header: &str, frames: &[String], source: TraceKey) -> Passage {
    let mut parts = Vec::with_capacity(frames.len() + 1);
    if !header.is_empty() {
        parts.push(format!("{HEADER_MARKER} {header}."));
    }
    for (k, body) in frames.iter().enumerate() {
        if body.is_empty() {
            parts.push(format!("f{}.", k + 1));
        } else {
            parts.push(format!("f{} {body}.", k + 1));
        }
    }
    Passage {
        text: parts.join(" "),
        frame_count: frames.len(),
        source,
    }
}

/// Full preprocessing pipeline for one trace.
pub fn preprocess(trace: &StackTrace, config: &PreprocessConfig, source: TraceKey) -> Result<Passage> {
    config.validate()?;
    let deduplicated = remove_consecutive_duplicates(trace);
    let sampled = take_top_frames(&deduplicated, config.top_n);
    Ok(render_passage(&sampled, config, source))
}

/// Passages for every trace of every report, in corpus order.
pub fn preprocess_corpus(corpus: &Corpus, config: &PreprocessConfig) -> Result<Vec<Passage>> {
    config.validate()?;
    let mut passages = Vec::new();
    for report in corpus.reports() {
        for (index, trace) in report.traces.iter().enumerate() {
            passages.push(preprocess(trace, config, TraceKey::new(report.report_id.as_str(), index))?);
        }
    }
    Ok(passages)
}

/// Reads a rendered passage back into a trace whose frames hold the cleaned
/// sentence bodies.
pub fn passage_to_trace(text: &str, language: Language) -> StackTrace {
    let mut header = String::new();
    let mut frames = Vec::new();
    for sentence in text.split('.').map(str::trim).filter(|s| !s.is_empty()) {
        let (marker, body) = sentence.split_once(' ').unwrap_or((sentence, ""));
        if marker == HEADER_MARKER {
            header = body.to_string();
        } else if marker.strip_prefix('f').is_some_and(|k| k.parse::<usize>().is_ok()) {
            frames.push(StackFrame::new("", body));
        }
    }
    StackTrace::new(language, header, frames)
}

/// Writes passages as JSON lines: `{"key": "report#trace", "text": "..."}`.
pub fn write_passages<W: Write>(mut out: W, passages: &[Passage]) -> Result<()> {
    for passage in passages {
        let record = PassageRecord {
            key: passage.source.to_string(),
            text: passage.text.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::format("passage", e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_passages<R: BufRead>(input: R) -> Result<Vec<(TraceKey, String)>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PassageRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("passage", format!("line {}: {e}", idx + 1)))?;
        let key = TraceKey::parse(&record.key)
            .ok_or_else(|| Error::format("passage", format!("line {}: bad key `{}`", idx + 1, record.key)))?;
        out.push((key, record.text));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    key: String,
    text: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_gdb, parse_java};

    const FIG2: &str = "Exception in thread \"main\" java.lang.NullPointerException\n    at com.example.MyClass.myMethod(MyClass.java:10)\n    at com.example.MyClass.main(MyClass.java:5)\n";
    const FIG3: &str = "#0  0x40990b in crash_func() at example.c:6\n#1  0x40250a in inter_function() at example.c:10\n#2  0x40150a in main() at example.c:15\n";

    fn java_trace(names: &[&str]) -> StackTrace {
        StackTrace::from_frame_names(Language::Java, names)
    }

    fn key() -> TraceKey {
        TraceKey::new("r1", 0)
    }

    #[test]
    fn dedup_collapses_runs_only() {
        let t = remove_consecutive_duplicates(&java_trace(&["p.A.f", "p.A.f", "p.B.g", "p.A.f"]));
        let names: Vec<_> = t.frames.iter().map(|f| f.function.as_str()).collect();
        assert_eq!(names, ["f", "g", "f"]);
        assert_eq!(t.frames[2].ordinal, 2);
    }

    #[test]
    fn dedup_recursion() {
        let names = vec!["p.A.recurse"; 50];
        assert_eq!(remove_consecutive_duplicates(&java_trace(&names)).len(), 1);
    }

    #[test]
    fn dedup_respects_path() {
        let t = java_trace(&["p1.f", "p2.f"]);
        assert_eq!(remove_consecutive_duplicates(&t), t);
    }

    #[test]
    fn top_frames() {
        let names: Vec<String> = (0..15).map(|i| format!("p.C.m{i}")).collect();
        let t = StackTrace::from_frame_names(Language::Java, &names);
        let top = take_top_frames(&t, 10);
        assert_eq!(top.len(), 10);
        assert_eq!(top.frames[9].function, "m9");
        assert_eq!(take_top_frames(&java_trace(&["a.b", "c.d", "e.f"]), 10).len(), 3);

        let gdb = &parse_gdb(FIG3)[0];
        let first = take_top_frames(gdb, 1);
        assert_eq!(first.len(), 1);
        assert_eq!(first.frames[0].function, "crash_func");
    }

    #[test]
    fn trimming_levels() {
        let frame = &java_trace(&["org.example.package.Class.method"]).frames[0];
        let mut cfg = PreprocessConfig::new(Language::Java);
        assert_eq!(clean_frame(frame, &cfg), "org example package class method");
        cfg.trim_level = TrimLevel::L1;
        assert_eq!(clean_frame(frame, &cfg), "org example package class");
        cfg.trim_level = TrimLevel::L2;
        assert_eq!(clean_frame(frame, &cfg), "org example package");
    }

    #[test]
    fn cpp_prefixes_are_stripped() {
        let cfg = PreprocessConfig::new(Language::Cpp);
        let frame = StackFrame::new("", "IA__gtk_dialog_run");
        assert_eq!(clean_frame(&frame, &cfg), "gtk dialog run");
        assert_eq!(clean_frame(&StackFrame::new("", "__GI_raise"), &cfg), "raise");
        assert_eq!(clean_frame(&StackFrame::new("", "_GI_abort"), &cfg), "abort");
        assert_eq!(clean_frame(&StackFrame::new("std::vector<int>", "push_back"), &cfg), "std vector int push back");
    }

    #[test]
    fn numbers_and_addresses_are_dropped() {
        assert_eq!(clean_text("#0 0x40990b in crash_func() at example.c:6", true), "in crash func at example c");
        assert_eq!(clean_text("Foo$1.lambda$run$0", true), "foo lambda run");
        assert_eq!(clean_text("MixedCase", false), "MixedCase");
    }

    #[test]
    fn example_passage() {
        let trace = &parse_java(FIG2)[0];
        let passage = preprocess(trace, &PreprocessConfig::new(Language::Java), key()).unwrap();
        assert_eq!(
            passage.text,
            "exc java lang nullpointerexception. f1 com example myclass mymethod. f2 com example myclass main."
        );
        assert_eq!(passage.frame_count, 2);
    }

    #[test]
    fn header_message_is_not_rendered() {
        let trace = StackTrace::new(
            Language::Java,
            "java.io.IOException: disk 3 full",
            java_trace(&["a.B.c"]).frames,
        );
        let passage = render_passage(&trace, &PreprocessConfig::new(Language::Java), key());
        assert_eq!(passage.text, "exc java io ioexception. f1 a b c.");
        let mut cfg = PreprocessConfig::new(Language::Java);
        cfg.include_header = false;
        assert_eq!(render_passage(&trace, &cfg, key()).text, "f1 a b c.");
    }

    #[test]
    fn single_frame_single_marker() {
        let passage = preprocess(&java_trace(&["a.B.c"]), &PreprocessConfig::new(Language::Java), key()).unwrap();
        assert_eq!(passage.text, "f1 a b c.");
        assert_eq!(passage.frame_count, 1);
    }

    #[test]
    fn dedup_runs_before_sampling() {
        let mut names = vec!["p.Same.loop"; 25];
        names.push("p.Other.tail");
        let passage = preprocess(&java_trace(&names[..25]), &PreprocessConfig::new(Language::Java), key()).unwrap();
        assert_eq!(passage.frame_count, 1);
        let passage = preprocess(&java_trace(&names), &PreprocessConfig::new(Language::Java), key()).unwrap();
        assert_eq!(passage.frame_count, 2);
    }

    #[test]
    fn rendering_is_a_fixpoint() {
        let cfg = PreprocessConfig::new(Language::Java);
        let passage = preprocess(&parse_java(FIG2)[0], &cfg, key()).unwrap();
        let again = preprocess(&passage_to_trace(&passage.text, Language::Java), &cfg, key()).unwrap();
        assert_eq!(again.text, passage.text);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::new(Language::Cpp);
        cfg.trim_level = TrimLevel::L1;
        assert!(cfg.validate().is_err());
        let mut cfg = PreprocessConfig::new(Language::Java);
        cfg.top_n = 0;
        assert!(preprocess(&java_trace(&["a.b"]), &cfg, key()).is_err());
    }

    #[test]
    fn passage_file_round_trip() {
        let passages = vec![
            Passage { text: "f1 a b.".into(), frame_count: 1, source: TraceKey::new("r#1", 0) },
            Passage { text: "f1 c.".into(), frame_count: 1, source: TraceKey::new("r2", 3) },
        ];
        let mut buf = Vec::new();
        write_passages(&mut buf, &passages).unwrap();
        let back = read_passages(buf.as_slice()).unwrap();
        assert_eq!(back[0], (TraceKey::new("r#1", 0), "f1 a b.".to_string()));
        assert_eq!(back[1].0.trace_index, 3);
    }
}
