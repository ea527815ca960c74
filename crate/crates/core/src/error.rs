use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The log argument `((1-p)/p)(beta/alpha)` is not above one, so no
    /// finite window ever prefers the reliable label.
    #[error("degenerate classification threshold: ((1-p)/p)*(beta/alpha) = {0} <= 1")]
    DegenerateThreshold(f64),

    #[error("profile likelihood is not differentiable at theta = {0}")]
    NonDifferentiable(f64),

    #[error("topology error: {0}")]
    Topology(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
