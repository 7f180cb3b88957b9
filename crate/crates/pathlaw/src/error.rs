use thiserror::Error;

/// Errors surfaced by simulation, estimation and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    /// A dimension, grid or length precondition was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Step index outside the trajectory range.
    #[error("step index {index} out of range 0..={max}")]
    StepOutOfRange { index: usize, max: usize },

    /// Two objects that must share a grid (same step, memory length, dimension) do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The diffusion matrix product is numerically singular at some state, so its
    /// inverse weight matrix cannot be formed.
    #[error("singular diffusion: {0}")]
    SingularDiffusion(String),

    /// The information matrix is numerically singular, so the limit law is degenerate.
    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    /// A simulated state became NaN or infinite.
    #[error("non-finite state encountered: {0}")]
    NonFinite(String),

    /// The normal equations of the least-squares problem are singular, so the
    /// data do not identify the parameter.
    #[error("degenerate normal equations: {0}")]
    DegenerateNormalEquations(String),

    /// One message per violated configuration constraint.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
