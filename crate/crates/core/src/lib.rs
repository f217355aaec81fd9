//! Cropland classification from monthly multispectral time series.
//!
//! A one-layer LSTM trunk feeds two logistic heads: one for the large,
//! distribution-shifted global label pool and one for the small local pool of
//! the mapping region. Everything here is pure computation over `alloc`
//! collections; file formats, CSV ingest and the command line live in the
//! `cropmap` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};

/// Composited windows per pixel.
pub const TIMESTEPS: usize = 12;
/// Sentinel-2 bands kept after dropping B01 and B10.
pub const N_BANDS: usize = 11;
/// Bands plus NDVI.
pub const FEATURES: usize = N_BANDS + 1;

/// Band names in storage order; NDVI follows as the last feature.
pub const BAND_NAMES: [&str; N_BANDS] = [
    "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12",
];
pub const FEATURE_NAMES: [&str; FEATURES] = [
    "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12", "NDVI",
];

/// Index of B04 (red) within [`BAND_NAMES`].
pub const B04: usize = 2;
/// Index of B08 (NIR) within [`BAND_NAMES`].
pub const B08: usize = 6;
