//! File formats, CSV ingest, parallel raster inference and the `cropmap`
//! command line on top of `cropmap-core`.

pub mod checkpoint;
pub mod cli;
mod container;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod parallel;
pub mod rasterio;

pub use cropmap_core as core;
pub use error::{Error, FormatError, Result};
