//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence of {len} tokens exceeds the padded length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: usize },

    #[error("graph not finalized: {0}")]
    GraphNotFinalized(&'static str),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("need at least {min} reports, got {got}")]
    TooFewReports { got: usize, min: usize },

    #[error("model/corpus mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("run {run} failed: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidConfig(_) => 1,
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => 3,
            Error::RunFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
