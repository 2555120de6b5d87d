use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid configuration value (orders, budgets, widths).
    #[error("configuration error: {0}")]
    Config(String),
    /// Gram or support matrix too ill-conditioned to invert.
    #[error("rank deficiency: condition number {cond:.3e} exceeds cap {cap:.3e}")]
    RankDeficient { cond: f64, cap: f64 },
    /// Iteration or decomposition produced non-finite or failed results.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// (I - C) singular in a second-kind Fredholm solve.
    #[error("resonance: (I - C) is singular (min singular value {0:.3e})")]
    Resonance(f64),
    /// Least-squares refit on an OMP support failed.
    #[error("refit failed on support {support:?}")]
    Refit { support: Vec<usize> },
    /// Scenario validation failures, all collected.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    /// A library error raised while running one scenario section.
    #[error("[{section}] {source}")]
    Section { section: String, source: Box<Error> },
    /// Filesystem or serialization failures in the CLI layer.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
