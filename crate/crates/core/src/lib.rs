//! Two-stage heterogeneous panel forecasting.
//!
//! Stage 1 is a pooled AR(1) with actor fixed effects. Stage 2 models the
//! cross-sectional dynamics of the Stage-1 residuals, either globally or
//! per block of actors. The crate also carries the rolling evaluation
//! protocol, forecast-comparison inference, placebo validation, subspace
//! geometry diagnostics and a synthetic panel generator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod panel;
pub mod engines;
pub mod evaluation;
pub mod mixture;
pub mod stage1;
pub mod synth;
pub mod validation;

pub use error::{Error, Result};
pub use exec::Execution;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
