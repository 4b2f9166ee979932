use thiserror::Error;

/// Errors raised by the pricing, expansion and PDE routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("vol-of-vol {nu} is below the rescaling threshold {threshold}")]
    DegenerateVolOfVol { nu: f64, threshold: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("price {price} outside no-arbitrage band [{lower}, {upper}]")]
    PriceOutOfBounds { price: f64, lower: f64, upper: f64 },

    #[error("root finder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("quadrature did not converge: estimate {estimate}, change on refinement {change}")]
    Quadrature { estimate: f64, change: f64 },

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("finite difference solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
