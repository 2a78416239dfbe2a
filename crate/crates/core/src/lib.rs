//! Thermal-time temporal sampling for satellite image time series.
//!
//! The crate covers the full pipeline: growing degree days ([`thermal`]), an
//! on-disk data cube format ([`cubeio`]), a seeded multi-year synthetic
//! benchmark ([`synth`]), the three temporal samplers ([`sampling`]), a
//! per-pixel temporal-attention classifier with an exact backward pass
//! ([`model`]), calibration-aware metrics ([`metrics`]) and the experiment
//! harness ([`bench`]).

pub mod bench;
pub mod cubeio;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod synth;
pub mod thermal;

pub use error::{Error, Result};
