//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two grid functions (or a function and an operator) live on different
    /// grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A parameter violates its documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A sample or an intermediate value came out NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The explicit correction sub-step would be unstable at this gain and
    /// step size.
    #[error("stiff correction step: r*dt*|C*C| = {0:.3e} exceeds 10; reduce dt or the gain")]
    Stiffness(f64),

    /// A value left the domain of a kernel or map.
    #[error("domain error: {0}")]
    Domain(String),
}
