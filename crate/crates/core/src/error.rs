use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature self-test failed: {0}")]
    Quadrature(String),
    #[error("order {order} not resolvable on this grid (limit {limit})")]
    Resolution { order: usize, limit: usize },
    #[error("point at radius {r} lies outside r_max = {r_max}")]
    Extrapolation { r: f64, r_max: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("operator assembly failed: {0}")]
    Assembly(String),
    #[error("eigensolver failed on block {block}: {message}")]
    Eigen { block: i32, message: String },
    #[error("linear solve failed: {0}")]
    Linalg(String),
    #[error("time integration failed: {0}")]
    Integration(String),
    #[error("instability detected at t = {t}: norm grew from {before:e} to {after:e} in one step")]
    Instability { t: f64, before: f64, after: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
