//! Source locations and diagnostics.
//!
//! Every user-facing failure in the pipeline is a [`Diag`]: one line of the form
//! `file:line:col: message`, optionally tagged with the verifier rule that fired.
//! Internal invariant violations use [`Diag::internal`] so the CLI can map them
//! to a distinct exit code.

use std::fmt;

/// A half-open source region. Lines and columns are 1-based; `0:0` means
/// "no source position" (used by diagnostics raised on generated IR).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }

    pub fn none() -> Self {
        Span::default()
    }
}

/// Severity class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// A problem in the user's input: parse error, type error, illegal
    /// primitive, schedule conflict, simulation mismatch. Exit code 1.
    User,
    /// A broken internal invariant (replay mismatch, verifier failure on
    /// generated IR). Exit code 2.
    Internal,
}

/// A single diagnostic. Rendered as `file:line:col: message`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct Diag {
    pub file: String,
    pub span: Span,
    pub message: String,
    /// Verifier rule id (e.g. `stream-order-violation`) when applicable.
    pub rule: Option<String>,
    pub severity: Severity,
}

impl fmt::Display for Diag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = if self.file.is_empty() { "<ir>" } else { &self.file };
        write!(f, "{}:{}:{}: {}", file, self.span.line, self.span.col, self.message)?;
        if let Some(rule) = &self.rule {
            write!(f, " [{rule}]")?;
        }
        Ok(())
    }
}

impl Diag {
    pub fn user(file: impl Into<String>, span: Span, message: impl Into<String>) -> Self {
        Diag {
            file: file.into(),
            span,
            message: message.into(),
            rule: None,
            severity: Severity::User,
        }
    }

    /// A user error with no useful source position.
    pub fn user_nospan(message: impl Into<String>) -> Self {
        Diag::user("", Span::none(), message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Diag {
            file: String::new(),
            span: Span::none(),
            message: message.into(),
            rule: None,
            severity: Severity::Internal,
        }
    }

    pub fn with_rule(mut self, rule: impl Into<String>) -> Self {
        self.rule = Some(rule.into());
        self
    }

    /// Prepend a location (e.g. a script file and line) to the message
    /// when the diagnostic has no source position of its own.
    pub fn prefix(mut self, loc: &str) -> Self {
        self.message = format!("{loc}: {}", self.message);
        self
    }
}

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Diag>;

/// Log level, read once from `MINIALLO_LOG` (`quiet` | `info` | `debug`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

pub fn log_level() -> LogLevel {
    static LEVEL: std::sync::OnceLock<LogLevel> = std::sync::OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("MINIALLO_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("info") => LogLevel::Info,
        _ => LogLevel::Quiet,
    })
}

/// Print a progress line to stderr if `MINIALLO_LOG` allows it.
pub fn log(level: LogLevel, msg: impl AsRef<str>) {
    if log_level() >= level {
        eprintln!("miniallo: {}", msg.as_ref());
    }
}
