//! Co-synthesis of stimulus and reference signals for correlation-based
//! characterization measurements.
//!
//! The crate builds weighting functions that reject deterministic backgrounds,
//! co-synthesizes the periodic modulating stimulus and the correlation-meter
//! reference that realize them with minimum random-error variance, simulates
//! the full measurement chain (device + background + noise + correlation
//! meter), predicts estimator variances in closed form, and benchmarks the
//! synthesized schedules against conventional harmonic-modulation lock-in
//! detection.

pub mod curve;
pub mod dut;
pub mod error;
pub mod lockin;
pub mod mc;
pub mod meter;
pub mod noise;
pub mod schedule;
pub mod synthesis;
pub mod weighting;

pub use error::{Error, Result};
