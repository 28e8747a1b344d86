use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported derivative order {0} (supported: 1..=4)")]
    UnsupportedOrder(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(
        "optimizer did not converge after {iterations} iterations (|grad|_inf = {grad_norm:e})"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    /// The Hessian at the mode is not positive definite, so the target is not
    /// log-concave around its mode.
    #[error("hessian at the mode is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("every sampled direction violated the curvature bound's validity range")]
    AllDirectionsInvalid,

    #[error("non-finite importance ratio at sample {index}")]
    NonFiniteRatio { index: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::NonFinite(_) => "non_finite",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::AllDirectionsInvalid => "all_directions_invalid",
            Error::NonFiniteRatio { .. } => "non_finite_ratio",
            Error::Dataset(_) => "dataset",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// True when the failure means the target breaks the log-concavity
    /// assumption the certificate relies on.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::AllDirectionsInvalid
        )
    }
}
