use thiserror::Error;

use crate::param::LayerRole;

#[derive(Debug, Error)]
pub enum Error {
    #[error("role {0} is not present in the spec")]
    MissingRole(LayerRole),
    #[error("gauge transform: {0}")]
    Gauge(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("i/o error for {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
