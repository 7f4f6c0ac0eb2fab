use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix I + Q is not positive definite")]
    InvalidTilt,

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("quadrature did not reach tolerance {tolerance:e} (achieved {achieved:e})")]
    Quadrature { tolerance: f64, achieved: f64 },

    #[error("moment map inversion failed for row {row}: {reason}")]
    Inversion { row: usize, reason: String },

    #[error("power iteration did not converge (last estimates {0}, {1})")]
    PowerIteration(f64, f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParam(_) | Error::Dimension(_) | Error::Config(_) => 1,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            _ => 2,
        }
    }
}
