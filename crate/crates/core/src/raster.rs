//! Pixel-major raster stacks and tiled per-pixel inference.
//!
//! Stack data is laid out `[row][col][timestep][feature]` so each pixel's
//! time series is one contiguous slice. Invalid pixels are tracked in a
//! separate mask and never scored.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{Checkpoint, HeadKind};

/// Georeferencing carried through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMetadata {
    /// GDAL-style affine transform.
    pub transform: [f64; 6],
    pub crs: String,
}

fn pixel_count(width: usize, height: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .ok_or_else(|| Error::Precondition(format!("raster dimensions {width}×{height} overflow")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    width: usize,
    height: usize,
    timesteps: usize,
    features: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
    pub geo: Option<GeoMetadata>,
}

impl RasterStack {
    pub fn new(
        width: usize,
        height: usize,
        timesteps: usize,
        features: usize,
        data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = pixel_count(width, height)?;
        let len = n
            .checked_mul(timesteps)
            .and_then(|v| v.checked_mul(features))
            .ok_or_else(|| Error::Precondition("raster stack size overflows".into()))?;
        check_dim("raster stack data", len, data.len())?;
        check_dim("raster stack mask", n, valid.len())?;
        Ok(Self { width, height, timesteps, features, data, valid, geo: None })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn pixel_len(&self) -> usize {
        self.timesteps * self.features
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = row * self.width + col;
        &self.data[i * self.pixel_len()..(i + 1) * self.pixel_len()]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    /// The pixel's series widened to `f64`.
    pub fn pixel_f64(&self, row: usize, col: usize) -> Vec<f64> {
        self.pixel(row, col).iter().map(|&v| f64::from(v)).collect()
    }
}

/// Single-plane crop probabilities; nodata pixels hold 0 and are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
    pub geo: Option<GeoMetadata>,
}

impl ProbabilityRaster {
    pub fn new(width: usize, height: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = pixel_count(width, height)?;
        check_dim("probability raster values", n, values.len())?;
        check_dim("probability raster mask", n, valid.len())?;
        Ok(Self { width, height, values, valid, geo: None })
    }
}

/// Binary crop mask; nodata pixels hold 0 and are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub valid: Vec<bool>,
    pub geo: Option<GeoMetadata>,
}

impl MaskRaster {
    pub fn count_ones(&self) -> usize {
        self.values.iter().zip(&self.valid).filter(|(&v, &ok)| ok && v == 1).count()
    }
}

/// Scores one pixel from its raw `T·D` series.
pub trait PixelScorer {
    /// `(timesteps, features)` the scorer expects.
    fn input_shape(&self) -> (usize, usize);
    fn score(&self, raw: &[f64]) -> Result<f64>;
}

/// A checkpoint bound to one of its heads.
#[derive(Debug, Clone, Copy)]
pub struct LstmScorer<'a> {
    pub checkpoint: &'a Checkpoint,
    pub head: HeadKind,
}

impl PixelScorer for LstmScorer<'_> {
    fn input_shape(&self) -> (usize, usize) {
        (self.checkpoint.config.timesteps, self.checkpoint.config.input_features)
    }

    fn score(&self, raw: &[f64]) -> Result<f64> {
        self.checkpoint.predict_raw(raw, self.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Row-major decomposition into `tile_size × tile_size` tiles (smaller at the
/// right and bottom edges).
pub fn tiles(width: usize, height: usize, tile_size: usize) -> Result<Vec<Tile>> {
    if tile_size == 0 {
        return Err(Error::Precondition("tile size must be positive".into()));
    }
    let mut out = Vec::new();
    for row0 in (0..height).step_by(tile_size) {
        for col0 in (0..width).step_by(tile_size) {
            out.push(Tile {
                row0,
                col0,
                rows: tile_size.min(height - row0),
                cols: tile_size.min(width - col0),
            });
        }
    }
    Ok(out)
}

fn check_shape<S: PixelScorer + ?Sized>(scorer: &S, stack: &RasterStack) -> Result<()> {
    let (t, f) = scorer.input_shape();
    check_dim("raster timesteps", t, stack.timesteps())?;
    check_dim("raster features", f, stack.features())
}

/// Scores the valid pixels of one tile, row-major within the tile. Invalid
/// pixels yield `0.0`.
pub fn predict_tile<S: PixelScorer + ?Sized>(scorer: &S, stack: &RasterStack, tile: Tile) -> Result<Vec<f32>> {
    check_shape(scorer, stack)?;
    let mut out = Vec::with_capacity(tile.rows * tile.cols);
    for r in tile.row0..tile.row0 + tile.rows {
        for c in tile.col0..tile.col0 + tile.cols {
            if stack.is_valid(r, c) {
                out.push(scorer.score(&stack.pixel_f64(r, c))? as f32);
            } else {
                out.push(0.0);
            }
        }
    }
    Ok(out)
}

/// Writes tile results into a full raster; the result does not depend on
/// tile order.
pub fn assemble(stack: &RasterStack, results: &[(Tile, Vec<f32>)]) -> Result<ProbabilityRaster> {
    let w = stack.width();
    let mut values = vec![0.0f32; w * stack.height()];
    for (tile, vals) in results {
        check_dim("tile values", tile.rows * tile.cols, vals.len())?;
        for (dr, chunk) in vals.chunks_exact(tile.cols).enumerate() {
            let start = (tile.row0 + dr) * w + tile.col0;
            values[start..start + tile.cols].copy_from_slice(chunk);
        }
    }
    let mut out = ProbabilityRaster::new(w, stack.height(), values, stack.valid().to_vec())?;
    out.geo = stack.geo.clone();
    Ok(out)
}

/// Tiled, sequential per-pixel inference.
pub fn predict_raster<S: PixelScorer + ?Sized>(
    scorer: &S,
    stack: &RasterStack,
    tile_size: usize,
) -> Result<ProbabilityRaster> {
    check_shape(scorer, stack)?;
    let results = tiles(stack.width(), stack.height(), tile_size)?
        .into_iter()
        .map(|t| predict_tile(scorer, stack, t).map(|v| (t, v)))
        .collect::<Result<Vec<_>>>()?;
    assemble(stack, &results)
}

/// `1` where `p >= threshold`; nodata stays masked.
pub fn threshold_mask(prob: &ProbabilityRaster, threshold: f64) -> MaskRaster {
    let values = prob
        .values
        .iter()
        .zip(&prob.valid)
        .map(|(&p, &ok)| u8::from(ok && f64::from(p) >= threshold))
        .collect();
    MaskRaster {
        width: prob.width,
        height: prob.height,
        values,
        valid: prob.valid.clone(),
        geo: prob.geo.clone(),
    }
}
