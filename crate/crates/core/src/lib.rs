//! Measurement-based small-signal modelling of a grid-following inverter.
//!
//! The crate simulates an average-model inverter on a Thevenin grid,
//! injects single-tone perturbations through a measurement PLL frame,
//! extracts the 2×2 dq admittance, fits it by vector fitting and predicts
//! weak-grid stability from the fitted model. A numerically linearized
//! model of the same plant serves as the reference throughout.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod extract;
pub mod network;
pub mod plant;
pub mod probe;
pub mod pu;
pub mod simcore;
pub mod stability;
pub mod statespace;
pub mod sweep;
pub mod vfit;

pub use error::{Error, Result};
