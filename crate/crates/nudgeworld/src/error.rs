use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter or argument fell outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A closed-form denominator vanished (e.g. gamma_user = 1 with p_user = 0).
    #[error("singular closed form: {0}")]
    Singularity(String),

    /// Value iteration did not reach the requested residual.
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The absorbing-chain linear system could not be solved.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// A reproduction pipeline's structural assertion failed.
    #[error("pattern assertion failed: {0}")]
    PatternViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
