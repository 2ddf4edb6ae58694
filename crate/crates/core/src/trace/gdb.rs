use std::sync::LazyLock;

use regex::Regex;

use super::{split_qualified, Language, StackFrame, StackTrace};

// `#3  0x00007f in func (a=1) at file.c:12` with address, `in`, and location all optional.
static FRAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*#(\d+)\s+(?:(0x[0-9a-fA-F]+)\s+in\s+)?(.+?)\s*$").unwrap()
});

static AT_LOCATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s+at\s+(\S+?):(\d+)\s*$").unwrap());

static FROM_LIBRARY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+from\s+(\S+)\s*$").unwrap());

/// Parses gdb backtrace text. Every `#0` frame opens a new trace.
pub fn parse_gdb(text: &str) -> Vec<StackTrace> {
    parse_gdb_counting(text).0
}

/// Like [`parse_gdb`], also returning the number of frame lines whose
/// function name could not be isolated.
pub fn parse_gdb_counting(text: &str) -> (Vec<StackTrace>, usize) {
    let mut traces = Vec::new();
    let mut frames: Vec<StackFrame> = Vec::new();
    let mut dropped = 0;

    for line in text.lines() {
        let Some(caps) = FRAME.captures(line) else {
            continue;
        };
        let depth: u64 = caps[1].parse().unwrap_or(u64::MAX);
        if depth == 0 && !frames.is_empty() {
            traces.push(StackTrace::new(Language::Cpp, "", std::mem::take(&mut frames)));
        }
        match parse_body(&caps[3], line.trim()) {
            Some(frame) => frames.push(frame),
            None => dropped += 1,
        }
    }
    if !frames.is_empty() {
        traces.push(StackTrace::new(Language::Cpp, "", frames));
    }
    if dropped > 0 {
        log::debug!("gdb parser dropped {dropped} frame(s) without a function name");
    }
    (traces, dropped)
}

fn parse_body(body: &str, raw: &str) -> Option<StackFrame> {
    let mut rest = body.trim();
    let mut source_file = String::new();
    let mut line = None;

    if let Some(caps) = AT_LOCATION.captures(rest) {
        source_file = caps[1].to_string();
        line = caps[2].parse().ok();
        rest = &rest[..caps.get(0).unwrap().start()];
    } else if let Some(caps) = FROM_LIBRARY.captures(rest) {
        source_file = caps[1].to_string();
        rest = &rest[..caps.get(0).unwrap().start()];
    }

    // demangled C++ frames carry the signature and then the gdb argument list
    let name = strip_argument_list(strip_argument_list(rest.trim()).trim()).trim();
    // Bare addresses and `??` carry no subroutine name.
    if name.is_empty() || name.starts_with("0x") || name.chars().all(|c| c == '?') {
        return None;
    }
    let (path, function) = split_qualified(name, Language::Cpp);
    if function.is_empty() {
        return None;
    }
    let mut frame = StackFrame::new(path, function);
    frame.source_file = source_file;
    frame.line = line;
    frame.raw = raw.to_string();
    Some(frame)
}

/// Removes a trailing balanced `( ... )` group, if any.
fn strip_argument_list(s: &str) -> &str {
    if !s.ends_with(')') {
        return s;
    }
    let mut depth = 0usize;
    for (idx, ch) in s.char_indices().rev() {
        match ch {
            ')' => depth += 1,
            '(' => {
                if depth == 0 {
                    return s;
                }
                depth -= 1;
                if depth == 0 {
                    return &s[..idx];
                }
            }
            _ => {}
        }
    }
    s
}
