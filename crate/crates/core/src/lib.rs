//! Driven-dissipative quantum dynamics, solved exactly with a Lindblad
//! master equation and approximately with a physics-informed Fourier neural
//! propagator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod commands;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod quantum;
pub mod rng;
pub mod training;

pub use error::{NqpError, Result};
