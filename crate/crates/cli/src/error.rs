//! Failure kinds of the command-line front end and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] bdstein::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// `2` for bad input, `3` for an unmet hypothesis, `1` for any other failure.
    pub fn exit_code(&self) -> i32 {
        use bdstein::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(e) => match e {
                E::InvalidParameter(_) | E::TailMass { .. } | E::HorizonTooLong(_) => 2,
                E::Hypothesis(_) | E::Precondition(_) | E::Monotonicity(_) | E::Divergent(_) => 3,
                E::Quadrature(_) | E::Explosion { .. } | E::InvalidBoundary(_) => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}
