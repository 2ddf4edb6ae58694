//! Structured stack traces and the text parsers that produce them.
//!
//! Two dialects are understood: JVM `Throwable.printStackTrace` output and
//! gdb-style `bt` listings. Both parsers are total: any input yields a
//! (possibly empty) list of traces, and lines that do not look like frames
//! are skipped.

mod gdb;
mod java;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gdb::parse_gdb;
pub use java::parse_java;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Cpp,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::Java => "java",
            Language::Cpp => "cpp",
        })
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            "cpp" | "c++" | "c" => Ok(Language::Cpp),
            other => Err(Error::config(format!("unknown language `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    /// 0-based depth, 0 is the innermost (top) frame.
    pub ordinal: usize,
    /// Dotted package path (Java) or `::` namespace path (C++); may be empty.
    pub qualified_path: String,
    pub function: String,
    pub source_file: String,
    pub line: Option<u32>,
    pub raw: String,
}

impl StackFrame {
    pub fn new(qualified_path: impl Into<String>, function: impl Into<String>) -> Self {
        StackFrame {
            ordinal: 0,
            qualified_path: qualified_path.into(),
            function: function.into(),
            source_file: String::new(),
            line: None,
            raw: String::new(),
        }
    }

    /// Frames are considered the same subroutine when both path and name agree.
    pub fn same_subroutine(&self, other: &StackFrame) -> bool {
        self.qualified_path == other.qualified_path && self.function == other.function
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackTrace {
    pub frames: Vec<StackFrame>,
    /// Exception class plus optional message for Java traces, empty otherwise.
    pub exception_header: String,
    pub language: Language,
}

impl StackTrace {
    pub fn new(language: Language, exception_header: impl Into<String>, frames: Vec<StackFrame>) -> Self {
        let mut trace = StackTrace {
            frames,
            exception_header: exception_header.into(),
            language,
        };
        trace.renumber();
        trace
    }

    /// Builds a trace from pre-split frame names such as
    /// `com.example.MyClass.myMethod` or `ns::Widget::draw`.
    pub fn from_frame_names<S: AsRef<str>>(language: Language, names: &[S]) -> Self {
        let frames = names
            .iter()
            .map(|name| {
                let name = name.as_ref().trim();
                let (path, function) = split_qualified(name, language);
                let mut frame = StackFrame::new(path, function);
                frame.raw = name.to_string();
                frame
            })
            .filter(|f| !f.function.is_empty())
            .collect();
        StackTrace::new(language, "", frames)
    }

    /// Re-assigns ordinals to `0..len`, keeping frame order.
    pub fn renumber(&mut self) {
        for (i, frame) in self.frames.iter_mut().enumerate() {
            frame.ordinal = i;
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Renders the trace back into the dialect it was parsed from.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.language {
            Language::Java => {
                if !self.exception_header.is_empty() {
                    out.push_str(&self.exception_header);
                    out.push('\n');
                }
                for frame in &self.frames {
                    let target = if frame.qualified_path.is_empty() {
                        frame.function.clone()
                    } else {
                        format!("{}.{}", frame.qualified_path, frame.function)
                    };
                    let location = match (frame.source_file.is_empty(), frame.line) {
                        (true, _) => "Unknown Source".to_string(),
                        (false, Some(line)) => format!("{}:{}", frame.source_file, line),
                        (false, None) => frame.source_file.clone(),
                    };
                    out.push_str(&format!("\tat {target}({location})\n"));
                }
            }
            Language::Cpp => {
                for frame in &self.frames {
                    let function = if frame.qualified_path.is_empty() {
                        frame.function.clone()
                    } else {
                        format!("{}::{}", frame.qualified_path, frame.function)
                    };
                    out.push_str(&format!("#{} {} ()", frame.ordinal, function));
                    if !frame.source_file.is_empty() {
                        match frame.line {
                            Some(line) => out.push_str(&format!(" at {}:{}", frame.source_file, line)),
                            None => out.push_str(&format!(" from {}", frame.source_file)),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Splits a frame target into (path, function) at the last separator of the
/// language: `.` for Java, `::` for C++.
pub(crate) fn split_qualified(name: &str, language: Language) -> (String, String) {
    let sep = match language {
        Language::Java => ".",
        Language::Cpp => "::",
    };
    match name.rfind(sep) {
        Some(idx) if language == Language::Cpp && name[..idx].contains('<') && !name[..idx].contains('>') => {
            // `::` inside an unterminated template argument list is not a scope separator
            (String::new(), name.to_string())
        }
        Some(idx) => (name[..idx].to_string(), name[idx + sep.len()..].to_string()),
        None => (String::new(), name.to_string()),
    }
}

/// Parses with both dialects and keeps whichever found more frames; ties go
/// to Java.
pub fn detect_and_parse(text: &str) -> Vec<StackTrace> {
    let java = parse_java(text);
    let gdb = parse_gdb(text);
    let count = |traces: &[StackTrace]| traces.iter().map(StackTrace::len).sum::<usize>();
    if count(&gdb) > count(&java) {
        gdb
    } else {
        java
    }
}

/// Parses text in a known dialect, falling back to detection when the
/// dialect-specific parser finds nothing.
pub fn parse_with_language(text: &str, language: Language) -> Vec<StackTrace> {
    let traces = match language {
        Language::Java => parse_java(text),
        Language::Cpp => parse_gdb(text),
    };
    if traces.is_empty() {
        detect_and_parse(text)
    } else {
        traces
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = "Exception in thread \"main\" java.lang.NullPointerException\n    at com.example.MyClass.myMethod(MyClass.java:10)\n    at com.example.MyClass.main(MyClass.java:5)\n";
    const FIG3: &str = "#0  0x40990b in crash_func() at example.c:6\n#1  0x40250a in inter_function() at example.c:10\n#2  0x40150a in main() at example.c:15\n";

    #[test]
    fn detect_dispatches_java() {
        assert_eq!(detect_and_parse(FIG2), parse_java(FIG2));
    }

    #[test]
    fn detect_dispatches_gdb() {
        assert_eq!(detect_and_parse(FIG3), parse_gdb(FIG3));
    }

    #[test]
    fn detect_on_prose_is_empty() {
        assert!(detect_and_parse("The application crashed when I clicked save. Please fix!").is_empty());
    }

    #[test]
    fn frame_names_split_on_last_separator() {
        let t = StackTrace::from_frame_names(Language::Java, &["org.example.package.Class.method"]);
        assert_eq!(t.frames[0].qualified_path, "org.example.package.Class");
        assert_eq!(t.frames[0].function, "method");

        let t = StackTrace::from_frame_names(Language::Cpp, &["ns::Widget::draw", "abort"]);
        assert_eq!(t.frames[0].qualified_path, "ns::Widget");
        assert_eq!(t.frames[0].function, "draw");
        assert_eq!(t.frames[1].qualified_path, "");
        assert_eq!(t.frames[1].ordinal, 1);
    }

    #[test]
    fn language_from_str() {
        assert_eq!("Java".parse::<Language>().unwrap(), Language::Java);
        assert_eq!("c++".parse::<Language>().unwrap(), Language::Cpp);
        assert!("python".parse::<Language>().is_err());
    }
}
