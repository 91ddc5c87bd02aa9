use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty series: the mode of an empty sequence is undefined")]
    EmptySeries,

    #[error("origin {0} has a zero device base")]
    DegenerateOrigin(u32),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("comuna {0} has no active devices during the baseline week")]
    NoBaseline(u32),

    #[error("{rate:.2}% of input rows were dropped (limit {limit:.2}%)")]
    ExcessiveDrops { rate: f64, limit: f64 },

    #[error("missing output of an upstream stage: run `{required}` first ({missing})")]
    PipelineOrder { required: &'static str, missing: PathBuf },

    #[error("transport solver did not converge after {0} pivots")]
    SolverStalled(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Stream(_) => 4,
            Error::PipelineOrder { .. } => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Stream(io),
                _ => unreachable!(),
            }
        } else {
            Error::Schema(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Stream(e.into())
        } else {
            Error::Schema(e.to_string())
        }
    }
}
