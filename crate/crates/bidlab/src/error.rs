use thiserror::Error;

/// Crate-wide error type. Variants map onto process exit categories so the
/// command-line interface can report a stable nonzero code per failure class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("safe-policy gate failed: {0}")]
    GateFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit category: 2 validation, 3 io/format, 4 numeric, 5 data/gate.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Io(_) | Error::Format(_) => 3,
            Error::NonFinite(_) | Error::Divergence(_) => 4,
            Error::EmptyDataset(_) | Error::Undefined(_) | Error::GateFailed(_) => 5,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
