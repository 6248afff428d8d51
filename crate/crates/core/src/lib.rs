//! Temperature estimation from NV-center ODMR spectra.
//!
//! Three estimators share one spectrum model:
//!
//! * [`classical::four_point`]: intensities at four fixed frequencies on the
//!   dip flanks, linearized against a calibrated reference spectrum;
//! * [`classical::lorentz_fit`]: double-Lorentzian least squares, reading
//!   the zero-field splitting `D = (f- + f+)/2`;
//! * [`gpr`]: Gaussian process regression from the whole intensity vector
//!   straight to temperature.
//!
//! [`synth`] generates labeled spectra with known ground truth and
//! [`benchmark`] runs the train-on-one-replicate, test-on-the-other protocol.

pub mod benchmark;
pub mod classical;
pub mod cli;
pub mod error;
pub mod gpr;
pub mod numerics;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};
pub use spectrum::{CalibrationModel, DoubleLorentzianParams, Spectrum, SweepGrid};
