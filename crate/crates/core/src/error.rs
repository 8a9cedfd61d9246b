use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument order violated: expected {lo} <= {hi}")]
    ArgumentOrder { lo: f64, hi: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("no density: {0}")]
    NoDensity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("unsupported score model: {0}")]
    UnsupportedModel(String),

    #[error("config error: {0}")]
    Config(String),

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
