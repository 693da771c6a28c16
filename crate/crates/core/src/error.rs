use std::fmt;

/// Errors raised by the library. Soft failures that still carry a usable
/// result are reported through `Flag` values on the result types instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("synthesis error: {0}")]
    Synthesis(String),
    #[error("dimension {dim} exceeds cap {cap}")]
    Capacity { dim: usize, cap: usize },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Synthesis(_) => "synthesis",
            Error::Capacity { .. } => "capacity",
        }
    }

    pub(crate) fn domain(msg: impl fmt::Display) -> Self {
        Error::Domain(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// A warning attached to an otherwise valid result.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Flag {
    pub code: String,
    pub detail: String,
}

impl Flag {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Flag { code: code.to_string(), detail: detail.into() }
    }
}
