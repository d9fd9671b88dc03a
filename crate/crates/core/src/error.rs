use thiserror::Error;

/// Errors raised across the framework.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),
    /// A scenario, strategy or parameter declaration is malformed.
    #[error("configuration error: {0}")]
    Config(String),
    /// Road network composition rejected.
    #[error("validation error: {0}")]
    Validation(String),
    /// Stream graph misuse (cross-graph wiring, duplicate tick, type mismatch).
    #[error("stream error: {0}")]
    Stream(String),
    /// Simulation aborted (non-finite controls, controller failure).
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("xml error: {0}")]
    Xml(String),
}

impl Error {
    /// Short label for one-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Stream(_) => "stream",
            Error::Sim(_) => "sim",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Xml(_) => "xml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
