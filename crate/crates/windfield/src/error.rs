use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped so a caller (notably the CLI) can map them onto
/// coarse failure classes: invalid inputs/parameters, numerical failures,
/// and I/O or format problems.
#[derive(Debug, Error)]
pub enum WindError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV parse failure{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Csv { line: Option<u64>, msg: String },

    #[error("JSON failure: {0}")]
    Json(#[from] serde_json::Error),
}

impl WindError {
    pub fn invalid_params(msg: impl Into<String>) -> Self {
        WindError::InvalidParams(msg.into())
    }

    pub fn invalid_data(msg: impl Into<String>) -> Self {
        WindError::InvalidData(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        WindError::Numerical(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        WindError::Estimation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, WindError>;
