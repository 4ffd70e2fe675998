use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("invalid rectangle: {0}")]
    InvalidRect(String),

    #[error("point lies outside the admissible box: {0}")]
    OutsideBox(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("covariance matrix is not positive semidefinite: pivot {pivot:e} at row {row}")]
    NotPositiveSemidefinite { row: usize, pivot: f64 },

    #[error("grid has {points} points, above the sampler limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("spectral tail holds {fraction:.3} of the norm (limit {limit}); try a truncation radius of at least {suggested_radius:.1}")]
    TruncationTail { fraction: f64, limit: f64, suggested_radius: f64 },

    #[error("spatial window clips {fraction:.4} of the occupation mass")]
    WindowClipping { fraction: f64 },

    #[error("Picard iteration diverged at iteration {iteration} (update {update:e})")]
    Diverged { iteration: usize, update: f64 },

    #[error("Picard iteration did not reach tolerance within {iterations} iterations (last update {update:e})")]
    NotConverged { iterations: usize, update: f64 },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("{0}")]
    Numerical(String),
}
