use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A time, index or coordinate outside the valid span.
    #[error("out of range: {0}")]
    Range(String),

    /// A direction or value outside a function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// One or more configuration violations. All of them are listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("undefined value: {0}")]
    Undefined(String),

    /// An operation was applied to data in the wrong state (e.g. destaggering twice).
    #[error("state error: {0}")]
    State(String),

    #[error("division guard: zero-valued bin {bin} on channel {channel}")]
    DivisionGuard { channel: usize, bin: usize },

    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported format version {found} in {file} (expected {expected})")]
    UnsupportedVersion {
        file: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("corrupt file {file} at byte {offset}: {reason}")]
    Format {
        file: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{file}: expected {expected} records, found {found}")]
    CountMismatch {
        file: PathBuf,
        expected: u64,
        found: u64,
    },

    /// A pipeline stage was requested before the artifact it consumes exists.
    #[error("missing prerequisite artifact `{artifact}` for stage `{stage}`")]
    Dependency { stage: String, artifact: String },

    #[error("failed to parse {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}
