use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants map onto the CLI's exit codes: everything except
/// [`Error::NonConvergence`] is an input or validation problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("identifiability error: {0}")]
    Identifiability(String),

    #[error("numeric error in cluster {cluster}: {message}")]
    Numeric { cluster: usize, message: String },

    #[error("variance undefined: {0}")]
    VarianceUndefined(String),

    #[error("quadrature did not settle: refinements differ by {difference:e}")]
    Quadrature { difference: f64 },

    #[error("fit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
