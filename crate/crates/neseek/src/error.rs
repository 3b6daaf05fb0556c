//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration or spec-block validation failure (bad gains, malformed
    /// graphs, inconsistent switching spec, unknown keys, ...).
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("convergence failure: {context} (residual {residual:.6e} after {iterations} iterations)")]
    ConvergenceFailure {
        context: String,
        residual: f64,
        iterations: usize,
    },

    /// A NaN/Inf appeared during integration; carries the offending time,
    /// player (1-based) and state term.
    #[error("numerical blowup at t={t}: player {player}, term `{term}`")]
    NumericalBlowup { t: f64, player: usize, term: String },

    /// The coefficient matrix of a Lyapunov equation has an eigenvalue pair
    /// summing to zero, so `PH + H'P = -Q` is singular.
    #[error("Lyapunov equation is singular: H has eigenvalues with lambda_i + lambda_j = 0")]
    EigenvaluePairing,

    /// `solve_lyapunov` produced a residual-consistent P that is not positive
    /// definite, i.e. H is not Hurwitz.
    #[error("matrix is not Hurwitz: Lyapunov solution has min eigenvalue {min_eig:.6e}")]
    NotHurwitz { min_eig: f64 },

    /// State that must have been established earlier is missing (e.g. a
    /// trigger held value that should exist from t = 0).
    #[error("internal consistency: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
