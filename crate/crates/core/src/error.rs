use thiserror::Error;

/// Errors produced by the integration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integration domain is empty")]
    EmptyDomain,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate normal at pixel ({u}, {v}): {reason}")]
    DegenerateNormal { u: usize, v: usize, reason: String },

    #[error("gauge deficient: {0}")]
    GaugeDeficient(String),

    #[error("matrix is not positive definite: diagonal entry {index} is {value:e}")]
    NotSpd { index: usize, value: f64 },

    #[error("numerical breakdown in conjugate gradient at iteration {iteration}")]
    NumericalBreakdown { iteration: usize },

    #[error("scene out of bounds: {0}")]
    SceneOutOfBounds(String),

    #[error("dense oracle limited to {limit} unknowns, problem has {size}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
