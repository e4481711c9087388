use thiserror::Error;

/// Everything that can go wrong in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("gain calibration failed: {0}")]
    Calibration(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("degenerate result: {0}")]
    Degenerate(String),
    #[error("parse error at byte {offset}: expected {expected}")]
    Parse { offset: u64, expected: String },
    #[error("file truncated at byte {offset}: expected {expected}")]
    Truncated { offset: u64, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Diverged { .. }
            | Error::Degenerate(_)
            | Error::UndefinedCorrelation(_)
            | Error::Calibration(_) => 3,
            _ => 2,
        }
    }
}
