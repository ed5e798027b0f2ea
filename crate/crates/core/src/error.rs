use thiserror::Error;

/// Errors produced anywhere in the compilation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("axis dependency error: {0}")]
    Dependency(String),

    #[error("invalid axes: {0}")]
    InvalidAxes(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row} has {len} non-zeros, exceeds capacity {cap}")]
    Capacity { row: usize, len: usize, cap: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("wrong stage: {0}")]
    Stage(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("decomposition error: {0}")]
    Decompose(String),

    #[error("lowering error: {0}")]
    Lowering(String),

    #[error("execution error: {0}")]
    Exec(String),

    #[error("tuner error: {0}")]
    Tune(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
