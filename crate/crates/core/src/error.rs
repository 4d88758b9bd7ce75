use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that should be a rotation is not orthonormal with unit determinant.
    #[error("matrix is not a rotation (orthonormality defect {orthonormality:.3e}, det {det})")]
    NotARotation { orthonormality: f64, det: f64 },

    /// A logarithm or local-coordinate map was evaluated outside its domain.
    #[error("logarithm undefined: rotation angle {angle} rad is on the branch cut")]
    BranchCut { angle: f64 },

    /// A covariance or information matrix could not be factorized.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The normal equations could not be solved.
    #[error("normal equations singular at iteration {iteration}")]
    SolverFailure { iteration: usize },

    /// Input data violated a documented contract.
    #[error("invalid input: {0}")]
    Input(String),

    /// A text record could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
