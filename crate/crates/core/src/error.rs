use thiserror::Error;

/// Errors produced by the estimation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max relative asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("derivative order {requested} unavailable (model supports up to {max})")]
    OrderUnavailable { requested: usize, max: usize },

    #[error("moment of order {order} diverged: {detail}")]
    MomentDiverged { order: usize, detail: String },

    #[error("quadrature failed: {0}")]
    QuadratureFailed(String),

    #[error("maximum subdivisions exceeded (best value {value:e}, error estimate {error_estimate:e})")]
    MaxSubdivisionsExceeded { value: f64, error_estimate: f64 },

    #[error("sample set is empty")]
    EmptySamples,

    #[error("all points were excluded from the fit")]
    AllPointsExcluded,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MomentDiverged { .. }
                | Error::QuadratureFailed(_)
                | Error::MaxSubdivisionsExceeded { .. }
                | Error::AllPointsExcluded
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
