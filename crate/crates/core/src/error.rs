use thiserror::Error;

/// Errors raised by the simulator and its configuration surface.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters that violate a family's admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Evaluation outside the domain of a closed form or table.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or unusable input data (CSV tables, profiles).
    #[error("data error: {0}")]
    Data(String),

    /// Time integration could not proceed.
    #[error("integration failure at t = {time}: {reason} (dt = {dt:e})")]
    Integration { time: f64, dt: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
