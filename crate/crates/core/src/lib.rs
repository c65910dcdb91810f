//! Super-resolution imaging of sparse scenes with sparse ultrasound arrays.
//!
//! The forward model is built from a single calibration PSF: every column is
//! that PSF with each element trace delayed by the travel-time difference
//! between the calibration source and a grid point. Reconstruction solves an
//! L1-regularized least-squares problem with monotone FISTA.

pub mod beamform;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod forward;
pub mod geometry;
pub mod operator;
pub mod simulate;
pub mod solver;
pub mod waveform;

pub use error::{Error, ErrorClass, Result};
