use thiserror::Error;

/// Errors surfaced by the library.
///
/// Solver *non-convergence* is not an error: it is reported through the
/// `converged`/`unbounded` flags on [`crate::ratefn::RateResult`] so callers
/// can distinguish "did not converge" from "diverges along a ray".
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A moment generating function was evaluated at or beyond its
    /// finiteness abscissa.
    #[error("mgf argument {theta} is at or beyond the finiteness abscissa {theta_max}")]
    MgfDomain { theta: f64, theta_max: f64 },

    /// Invalid distribution parameters (negative rate, empty support, ...).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Invalid model parameters (negative rates, unbounded residual density, ...).
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    /// Invalid time grid or path (non-increasing times, length mismatch, ...).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A query violated an operation precondition.
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// Simulation-side failure (e.g. not enough conditioning events).
    #[error("simulation: {0}")]
    Simulation(String),
}
