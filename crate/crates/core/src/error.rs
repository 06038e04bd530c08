use std::path::PathBuf;

/// Errors raised anywhere in the planner stack.
#[derive(thiserror::Error, Debug)]
pub enum SagaError {
    /// Invalid or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// Tensor shapes that do not agree.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// A NaN or infinity escaped a numerical operation.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    /// An index outside its valid range.
    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// Obstacle placement gave up before reaching the requested count.
    #[error("pillar placement failed: placed {placed} of {requested} after {attempts} attempts")]
    Placement {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    /// Malformed file contents.
    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SagaError {
    pub fn config(msg: impl Into<String>) -> Self {
        SagaError::Config(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SagaError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        SagaError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SagaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line contract: 2 for usage and
    /// validation failures, 3 for numerical or runtime faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            SagaError::NonFinite(_) | SagaError::Shape { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SagaError>;
