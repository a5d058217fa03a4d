use std::path::PathBuf;

use local_reservoir::Error as ModelError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Model(e) => match e {
                ModelError::InvalidConfig(_)
                | ModelError::Capacity { .. }
                | ModelError::DegenerateCurve { .. }
                | ModelError::Row { .. } => EXIT_VALIDATION,
                ModelError::EmptyCurve | ModelError::Numerical { .. } | ModelError::Io { .. } => EXIT_RUNTIME,
            },
            CliError::Io { .. } | CliError::Write(_) | CliError::Csv(_) | CliError::Json(_) => EXIT_RUNTIME,
        }
    }
}
