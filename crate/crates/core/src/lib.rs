//! Simulation and digital signal processing for photon-number discrimination
//! with series superconducting-nanowire detector arrays.
//!
//! - [`signal_model`]: bi-exponential pulses, white noise, traces.
//! - [`filtering`]: matched and low-pass filters, spectra.
//! - [`discrimination`]: peak extraction, histograms, mixture fits, jitter,
//!   fired-pixel statistics.
//! - [`experiments`]: Monte Carlo studies built from the above.
//! - [`io`]: binary and CSV trace formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discrimination;
pub mod error;
pub mod experiments;
pub mod filtering;
pub mod io;
pub mod signal_model;

pub use error::{Error, Result};
