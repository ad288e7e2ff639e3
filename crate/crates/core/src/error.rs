use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range. Carries the offending field.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("unknown agent {0}")]
    UnknownAgent(usize),

    /// The network violates one of its structural invariants.
    #[error("network structure: {0}")]
    Structure(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A statistic was requested on data that cannot support it.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }
}
