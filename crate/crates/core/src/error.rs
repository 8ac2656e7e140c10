use thiserror::Error;

/// Errors raised by simulation, panel handling and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("subject `{subject}`: {message}")]
    Subject { subject: String, message: String },
    #[error("subject `{subject}`, visit {visit}: {message}")]
    Visit {
        subject: String,
        visit: i64,
        message: String,
    },
    #[error("singular matrix (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
