use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid graph family parameters or experiment configuration.
    #[error("validation: {0}")]
    Validation(String),
    /// Eigen-solver failed to reach the requested tolerance within the iteration cap.
    #[error("eigen-solver did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    /// A state space or simulation exceeded the configured resource cap.
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
