use thiserror::Error;

/// Errors raised by the learning engine and its harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("trajectory size error: {0}")]
    Size(String),

    #[error("correction placement error: waypoint index {index} not in [1, {max}]")]
    CorrectionPlacement { index: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
