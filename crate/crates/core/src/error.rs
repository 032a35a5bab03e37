use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient: smallest Gram eigenvalue {sigma_min:e} <= tol {tol:e}")]
    RankDeficient { sigma_min: f64, tol: f64 },

    #[error("feature point at non-positive depth {depth}")]
    NonPositiveDepth { depth: f64 },

    #[error("estimated depth matrix is singular (estimated depth {z_hat})")]
    SingularZhat { z_hat: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    /// A right-hand-side fault with the offending state attached.
    #[error("simulation fault at t = {t}: {source}")]
    Fault {
        t: f64,
        state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),
}
