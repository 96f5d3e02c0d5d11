//! Seamless mosaicking of overlapping prediction tiles.
//!
//! Each tile is weighted by its distance to its own edge, so in overlap
//! zones the tile whose interior is closer dominates and the transition is
//! linear rather than a hard seam. Accumulation runs in f64 and is
//! insensitive to tile order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::raster::RasterGrid;

/// Floor applied to blend weights so fully-edge cells (1x1 tiles, tile
/// corners) still contribute instead of dividing by zero.
pub const WEIGHT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MosaicError {
    PatchOutOfBounds {
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
    },
    CellSizeMismatch,
}

impl fmt::Display for MosaicError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MosaicError::PatchOutOfBounds {
                row0,
                col0,
                rows,
                cols,
            } => write!(
                f,
                "patch {rows}x{cols} at ({row0}, {col0}) exceeds mosaic extent"
            ),
            MosaicError::CellSizeMismatch => write!(f, "patch cell size differs from mosaic"),
        }
    }
}

/// Per-cell blend weights for an `h`x`w` tile: normalized Chebyshev-style
/// distance to the nearest tile edge, ramping linearly from the border to 1
/// at the interior plateau, floored at [`WEIGHT_FLOOR`].
pub fn blend_mask(h: usize, w: usize) -> Vec<f64> {
    let m = ((h.min(w).max(1) - 1) / 2).max(1) as f64;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let d = i.min(j).min(h - 1 - i).min(w - 1 - j) as f64;
            out[i * w + j] = (d / m).min(1.0).max(WEIGHT_FLOOR);
        }
    }
    out
}

/// Collected tiles for one output mosaic. Patches are validated eagerly but
/// summed only at `finalize`, in placement order, so the result is
/// bit-identical no matter what order callers insert tiles in.
pub struct BlendAccumulator {
    pub rows: usize,
    pub cols: usize,
    cell_size: f64,
    origin_x: f64,
    origin_y: f64,
    nodata: f32,
    patches: Vec<(usize, usize, RasterGrid)>,
}

impl BlendAccumulator {
    /// Empty accumulator covering the extent and georeference of `extent`.
    pub fn new(extent: &RasterGrid) -> Self {
        BlendAccumulator {
            rows: extent.rows,
            cols: extent.cols,
            cell_size: extent.cell_size,
            origin_x: extent.origin_x,
            origin_y: extent.origin_y,
            nodata: extent.nodata,
            patches: Vec::new(),
        }
    }

    /// Blend a tile whose top-left cell lands at mosaic cell (row0, col0).
    /// Nodata cells in the tile are skipped.
    pub fn accumulate_patch(
        &mut self,
        patch: &RasterGrid,
        row0: usize,
        col0: usize,
    ) -> Result<(), MosaicError> {
        if row0 + patch.rows > self.rows || col0 + patch.cols > self.cols {
            return Err(MosaicError::PatchOutOfBounds {
                row0,
                col0,
                rows: patch.rows,
                cols: patch.cols,
            });
        }
        if (patch.cell_size - self.cell_size).abs() > 1e-9 * self.cell_size.abs() {
            return Err(MosaicError::CellSizeMismatch);
        }
        self.patches.push((row0, col0, patch.clone()));
        Ok(())
    }

    /// Weighted average per cell; cells no tile touched become nodata.
    pub fn finalize(&self) -> RasterGrid {
        let n = self.rows * self.cols;
        let mut value_sum = vec![0.0f64; n];
        let mut weight_sum = vec![0.0f64; n];
        // canonical summation order: placement, with insertion order only
        // breaking exact placement ties
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.sort_by_key(|&i| (self.patches[i].0, self.patches[i].1));
        for i in order {
            let (row0, col0, patch) = &self.patches[i];
            let weights = blend_mask(patch.rows, patch.cols);
            for r in 0..patch.rows {
                for c in 0..patch.cols {
                    let v = patch.at(r, c);
                    if v == patch.nodata {
                        continue;
                    }
                    let w = weights[r * patch.cols + c];
                    let idx = (row0 + r) * self.cols + (col0 + c);
                    value_sum[idx] += w * v as f64;
                    weight_sum[idx] += w;
                }
            }
        }
        let values: Vec<f32> = value_sum
            .iter()
            .zip(&weight_sum)
            .map(|(&v, &w)| if w > 0.0 { (v / w) as f32 } else { self.nodata })
            .collect();
        RasterGrid::new(
            self.rows,
            self.cols,
            self.cell_size,
            self.origin_x,
            self.origin_y,
            self.nodata,
            values,
        )
        .expect("accumulator extent is valid")
    }
}
