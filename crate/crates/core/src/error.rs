use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum BsnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("integration failure: {0}")]
    Integration(String),
    #[error("invariant violated at iteration {iteration}: {message}")]
    Invariant { iteration: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BsnError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            BsnError::Config(_) | BsnError::Validation(_) | BsnError::Dimension(_) => 3,
            BsnError::Parameter(_) => 3,
            BsnError::Io(_) => 3,
            BsnError::Singular(_)
            | BsnError::Numerical(_)
            | BsnError::Integration(_)
            | BsnError::Invariant { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, BsnError>;
