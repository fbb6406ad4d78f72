use thiserror::Error;

/// Errors produced by the solver, simulator and sweep engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("order statistics need at least two nouners, got n = {0}")]
    TooFewBidders(usize),

    #[error("share undefined at empty treasury")]
    ShareUndefined,

    #[error("horizon exceeded: period {period} is past T = {horizon}")]
    HorizonExceeded { period: usize, horizon: usize },

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("root not bracketed on [{lo}, {hi}]")]
    Bracketing { lo: f64, hi: f64 },

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
