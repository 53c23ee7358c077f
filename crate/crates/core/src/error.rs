use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate tetrahedron {index} (volume {volume:e})")]
    DegenerateTet { index: usize, volume: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("value {value} is not strictly inside ({min}, {max})")]
    OutOfBounds { value: f64, min: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible state: vertex {vertex} has clearance {distance:e} to half-space {plane}")]
    Infeasible { vertex: usize, plane: usize, distance: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("line search failed at newton iteration {iteration}: {dump}")]
    LineSearch { iteration: usize, dump: String },

    #[error("newton solve did not converge in {iterations} iterations (|grad|_inf = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("moment re-fit reached relative error {error:e} (limit {limit:e}); try a different beta or gamma")]
    RefitFailed { error: f64, limit: f64 },

    #[error("attack aborted at iteration {iteration}: {source}")]
    AttackAborted {
        iteration: usize,
        materials_json: String,
        #[source]
        source: Box<Error>,
    },

    #[error("inconsistent moments: {0}")]
    InconsistentMoments(String),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
