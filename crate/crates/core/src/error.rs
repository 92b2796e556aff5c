use std::path::PathBuf;

/// Errors raised anywhere in the model pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix {matrix} is singular or not positive definite")]
    Singular { matrix: String },

    #[error("time index out of covariate coverage: requested year {requested}, covariate covers {available} years")]
    Coverage { requested: usize, available: usize },

    #[error("undefined exceedance region: {0}")]
    UndefinedRegion(String),

    #[error("undefined skill score: benchmark mean score is zero")]
    UndefinedSkill,

    #[error("sampler failed at iteration {iteration} in block {block}: {source}")]
    Sampler {
        iteration: usize,
        block: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed artifact {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn singular(matrix: impl Into<String>) -> Self {
        Error::Singular {
            matrix: matrix.into(),
        }
    }
}
