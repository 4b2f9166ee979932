//! Library side of the `heatvol` command: configuration, subcommands and
//! CSV output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{Method, RunConfig};
pub use error::{CliError, Result};
