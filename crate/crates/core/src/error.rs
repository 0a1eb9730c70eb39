use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// The variants map onto the CLI exit codes: `Config`/`Usage` are usage
/// problems, `Schema`/`Domain`/`Io`/`Parse` are data problems, and the rest
/// are numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("optimization error: {0}")]
    Optimization(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Schema(_) | Error::Io(_) | Error::Parse(_) => 3,
            Error::Numerical(_) | Error::Estimation(_) | Error::Optimization(_) | Error::Simulation(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
