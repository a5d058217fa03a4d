use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no trial produced a decision at the reference cycle")]
    EmptyCurve,

    #[error("model too large: N = {n} needs 2^(2N+1) = {states} states, limit is N <= {max_n}")]
    Capacity { n: usize, states: usize, max_n: usize },

    #[error("linear solve failed: {reason} (residual {residual:e})")]
    Numerical { reason: String, residual: f64 },

    #[error("lookup curve is flat ({spread:.4} spread); it cannot be inverted")]
    DegenerateCurve { spread: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },
}
