use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("invalid value for `{field}`: {message}")]
    InvalidValue { field: String, message: String },

    #[error("feature descriptor is missing `{field}` for kind {kind}")]
    UnboundFeatureField { kind: String, field: &'static str },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("curve grids differ: {0}")]
    GridMismatch(String),

    #[error("spline system is not positive definite at row {row} (pivot {pivot:.3e}, smoothing {smoothing:.3e})")]
    SplineSolve {
        row: usize,
        pivot: f64,
        smoothing: f64,
    },

    #[error("coordinate descent did not converge after {iterations} sweeps (objective {objective:.6e}, last change {last_change:.3e})")]
    NotConverged {
        iterations: usize,
        objective: f64,
        last_change: f64,
    },

    #[error("infeasible cluster bounds: {0}")]
    Infeasible(String),

    #[error("missing feature column `{0}`")]
    MissingFeature(String),

    #[error("test leakage: {0}")]
    Leakage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::MissingColumn { .. }
            | Error::InvalidValue { .. }
            | Error::UnboundFeatureField { .. }
            | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
