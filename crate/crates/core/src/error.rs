use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("thrust direction undefined: velocity is zero while thrust is nonzero")]
    DegenerateDirection,
    #[error("spacecraft mass must be positive, got {0} kg")]
    InvalidMass(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("altitude {0} km is below the Earth's surface")]
    BelowSurface(f64),
    #[error("position magnitude is zero")]
    Singularity,
    #[error("rectilinear orbit: angular momentum is zero")]
    DegenerateOrbit,
    #[error("propagation requires {steps} steps which exceeds the limit {limit}")]
    StepOverflow { steps: f64, limit: usize },
    #[error("state invariant violated at t = {time} s: {reason}")]
    StateInvariant { time: f64, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ill-posed cost at step {step}: control Hessian is not positive definite")]
    IllPosedCost { step: usize },
    #[error("value iteration did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("gradient ascent diverged at iteration {iteration}")]
    Divergence { iteration: usize, trace: Vec<f64> },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("degenerate cost surface: zero range")]
    DegenerateSurface,
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("propagation of trajectory {index} failed: {source}")]
    Trajectory { index: usize, source: Box<Error> },
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// True for input or configuration problems, false for numerical failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::InvalidMass(_)
            | Error::DimensionMismatch(_)
            | Error::Empty(_)
            | Error::Config { .. }
            | Error::Io(_) => true,
            Error::Trajectory { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
