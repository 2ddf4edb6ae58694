use std::sync::LazyLock;

use regex::Regex;

use super::{split_qualified, Language, StackFrame, StackTrace};

static FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*at\s+([^\s(]+)\s*\(([^)]*)\)").unwrap());

// `Exception in thread "main" pkg.Cls: message`, `Caused by: pkg.Cls`, or a bare `pkg.Cls`.
static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"^\s*(?:Exception in thread "[^"]*"\s+)?(?:(?:Caused by|Suppressed):\s+)?([A-Za-z_$][\w$]*(?:\.[A-Za-z_$][\w$]*)+)(?::\s*(.*?))?\s*$"#,
    )
    .unwrap()
});

/// Parses JVM stack trace text. Each exception header (including every
/// `Caused by:` link) starts a new trace; headers with no frames are dropped.
pub fn parse_java(text: &str) -> Vec<StackTrace> {
    parse_java_counting(text).0
}

/// Like [`parse_java`], also returning the number of frame lines whose
/// function name could not be isolated.
pub fn parse_java_counting(text: &str) -> (Vec<StackTrace>, usize) {
    let mut traces = Vec::new();
    let mut dropped = 0;
    let mut header = String::new();
    let mut frames: Vec<StackFrame> = Vec::new();

    let mut flush = |header: &mut String, frames: &mut Vec<StackFrame>| {
        if !frames.is_empty() {
            traces.push(StackTrace::new(Language::Java, std::mem::take(header), std::mem::take(frames)));
        }
        header.clear();
    };

    for line in text.lines() {
        if let Some(caps) = FRAME.captures(line) {
            match parse_frame(&caps[1], &caps[2], line.trim()) {
                Some(frame) => frames.push(frame),
                None => dropped += 1,
            }
        } else if let Some(caps) = HEADER.captures(line) {
            flush(&mut header, &mut frames);
            header = match caps.get(2) {
                Some(msg) if !msg.as_str().is_empty() => format!("{}: {}", &caps[1], msg.as_str()),
                _ => caps[1].to_string(),
            };
        }
    }
    flush(&mut header, &mut frames);
    if dropped > 0 {
        log::debug!("java parser dropped {dropped} frame(s) without a function name");
    }
    (traces, dropped)
}

fn parse_frame(target: &str, location: &str, raw: &str) -> Option<StackFrame> {
    // Java 9+ prefixes frames with `module@version/` or a class-loader name.
    let target = target.rsplit('/').next().unwrap_or(target);
    let (path, function) = split_qualified(target, Language::Java);
    if function.is_empty() {
        return None;
    }
    let mut frame = StackFrame::new(path, function);
    frame.raw = raw.to_string();
    let location = location.trim();
    if location != "Unknown Source" && location != "Native Method" && !location.is_empty() {
        match location.rsplit_once(':') {
            Some((file, line)) if line.chars().all(|c| c.is_ascii_digit()) && !line.is_empty() => {
                frame.source_file = file.to_string();
                frame.line = line.parse().ok();
            }
            _ => frame.source_file = location.to_string(),
        }
    }
    Some(frame)
}
