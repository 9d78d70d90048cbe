use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config invalid at `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("training diverged: loss became non-finite at step {step}")]
    TrainingFailure { step: usize },

    #[error("dimension {dim} too large for quadrature oracle (max {max})")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("malformed weights file {path}: {message}")]
    WeightsFormat { path: PathBuf, message: String },

    #[error("missing or empty data file: {0}")]
    MissingData(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
