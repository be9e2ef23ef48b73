use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),
    #[error("normalizing series diverges: {0}")]
    Divergent(String),
    #[error("tail mass {tail:.3e} exceeds tolerance {tol:.1e}; {hint}")]
    TailMass { tail: f64, tol: f64, hint: String },
    #[error("read of invalid boundary entry at state {0}")]
    InvalidBoundary(usize),
    #[error("uniformization horizon too long: Lambda*t = {0:.3e} exceeds 1e6, split the time interval")]
    HorizonTooLong(f64),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("state {state} exceeded the explosion guard {cap}")]
    Explosion { state: usize, cap: usize },
    #[error("monotonicity required by the coupling fails at state {0}")]
    Monotonicity(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of a theorem hypothesis (as opposed to bad input).
    pub fn is_hypothesis(&self) -> bool {
        matches!(self, Error::Hypothesis(_))
    }
}
