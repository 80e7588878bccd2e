//! Crate-wide error type with the exit-code mapping used by the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or invalid argument (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent data, including IO and parse failures
    /// (CLI exit code 3).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure such as a non-finite gradient (CLI exit code 4).
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for this error: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
