//! Short-maturity implied volatility for the SABR model from heat kernel
//! asymptotics.
//!
//! The crate computes the order 0, 1 and 2 terms of the Taylor expansion in
//! maturity of Black, CEV or Bachelier implied volatility, exactly in strike.
//! A 2-D finite difference solver provides reference prices.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expansion;
pub mod fdm;
pub mod geometry;
pub mod kernel;
pub mod params;
pub mod pricers;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
pub use expansion::{Order, Proxy, SabrExpansion};
pub use fdm::{FdmConfig, FdmSolution};
pub use params::SabrParams;
pub use pricers::{OptionKind, OptionSpec};
