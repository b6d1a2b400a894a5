use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The instance is too large for an exhaustive or exact method.
    #[error("capacity error: {0}")]
    Capacity(String),
    /// The chain never reaches the requested distance to stationarity.
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Capacity(_) => "capacity",
            Error::NonConvergence(_) => "non_convergence",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Message without the category prefix.
    pub fn message(&self) -> String {
        match self {
            Error::Domain(m) | Error::Capacity(m) | Error::NonConvergence(m) | Error::Usage(m) => m.clone(),
            Error::Io(e) => e.to_string(),
            Error::Json(e) => e.to_string(),
            Error::Csv(e) => e.to_string(),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity(_) => 3,
            Error::NonConvergence(_) => 4,
            Error::Domain(_) | Error::Usage(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
