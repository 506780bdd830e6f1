use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cannot combine an interval union with a discrete set")]
    TagMismatch,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("model does not provide a {0} handle")]
    Capability(&'static str),

    #[error("non-finite score at row {row}, score {score}")]
    NonFiniteScore { row: usize, score: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate kernel weights (similarity sum {sum:e}); try a larger bandwidth")]
    DegenerateWeights { sum: f64 },

    #[error("bandwidth calibration failed: target ESS {target} outside achievable range [{min:.3}, {max:.3}]")]
    Calibration { target: f64, min: f64, max: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) | Error::Capability(_) => 2,
            Error::InvalidInput(_)
            | Error::TagMismatch
            | Error::NonFiniteScore { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => 3,
            Error::Numerical(_) | Error::DegenerateWeights { .. } | Error::Calibration { .. } => 4,
        }
    }
}
