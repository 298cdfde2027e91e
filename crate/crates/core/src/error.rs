use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("schema names column `{0}` which is absent from the header")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("dataset has no `{0}` block")]
    MissingBlock(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unidentifiable regime: {0}")]
    Unidentifiable(String),

    #[error("singular gram matrix (smallest pivot {pivot:e})")]
    Singular { pivot: f64 },

    #[error(
        "coordinate descent did not converge after {sweeps} sweeps (KKT residual {kkt_residual:e})"
    )]
    NoConvergence {
        sweeps: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("Newton iteration did not converge after {steps} steps (gradient norm {grad_norm:e})")]
    NewtonNoConvergence { steps: usize, grad_norm: f64 },

    #[error(
        "coefficient norm reached {norm:e} while the loss kept decreasing; the data look separable, add regularization"
    )]
    Separation { norm: f64 },

    #[error("learner failed on fold {fold}, target `{target}`: {source}")]
    Learner {
        fold: usize,
        target: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of a numerical routine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. }
            | Error::NoConvergence { .. }
            | Error::NewtonNoConvergence { .. }
            | Error::Separation { .. } => true,
            Error::Learner { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
