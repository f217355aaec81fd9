//! Tile-parallel raster inference.

use cropmap_core::raster::{assemble, predict_tile, tiles, PixelScorer, ProbabilityRaster, RasterStack};
use rayon::prelude::*;

/// Same output as [`cropmap_core::raster::predict_raster`], with tiles
/// scored on the rayon pool.
pub fn predict_raster_par<S: PixelScorer + Sync + ?Sized>(
    scorer: &S,
    stack: &RasterStack,
    tile_size: usize,
) -> cropmap_core::Result<ProbabilityRaster> {
    let results = tiles(stack.width(), stack.height(), tile_size)?
        .into_par_iter()
        .map(|t| predict_tile(scorer, stack, t).map(|v| (t, v)))
        .collect::<cropmap_core::Result<Vec<_>>>()?;
    assemble(stack, &results)
}
