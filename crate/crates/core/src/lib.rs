//! Building-level electric load forecasting with LSTM networks.
//!
//! Two forecasters share one from-scratch LSTM and gradient engine:
//!
//! - a stacked LSTM trained one step ahead and rolled forward recursively
//!   (optionally on a delayed load input), and
//! - an encoder–decoder where the encoder compresses a window of past loads
//!   into its final states and a calendar-only decoder emits the forecast.
//!
//! Everything is `f64`, row-vector convention, and deterministic given a seed.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod forecast;
pub mod gradcheck;
pub mod lstm;
pub mod matrix;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod s2s;
pub mod svg;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{global_l2_norm, Matrix};
pub use params::{GradSet, ParamSet};
pub use rng::{uniform_init, SeededRng};
