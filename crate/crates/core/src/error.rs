use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or option combinations that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared; `location` names where (layer, batch, ...).
    #[error("numeric error at {location}: {message}")]
    Numeric { location: String, message: String },

    /// An operation was called in the wrong order or with a stale cache.
    #[error("state error: {0}")]
    State(String),

    /// An argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// CSV/schema ingestion failure with a row or column location.
    #[error("ingestion error at {location}: {message}")]
    Ingest { location: String, message: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numeric(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn ingest(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingest {
            location: location.into(),
            message: message.into(),
        }
    }
}
