//! Raster and image file IO.

use anyhow::{Context, Result};
use p2d_core::raster::{decode_raster, encode_raster, RasterGrid};
use std::path::Path;

pub fn write_raster(grid: &RasterGrid, path: &Path) -> Result<()> {
    std::fs::write(path, encode_raster(grid))
        .with_context(|| format!("writing raster {}", path.display()))
}

pub fn read_raster(path: &Path) -> Result<RasterGrid> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading raster {}", path.display()))?;
    decode_raster(&bytes)
        .map_err(|e| anyhow::anyhow!("decoding raster {}: {e}", path.display()))
}

/// 8-bit grayscale PNG export with min-max stretch; non-finite values map
/// to black.
pub fn write_gray_png(values: &[f32], rows: usize, cols: usize, path: &Path) -> Result<()> {
    anyhow::ensure!(values.len() == rows * cols, "value count mismatch");
    let finite: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = finite.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(f32::EPSILON);
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if v.is_finite() {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    let img = image::GrayImage::from_raw(cols as u32, rows as u32, pixels)
        .expect("pixel buffer sized to dimensions");
    img.save(path)
        .with_context(|| format!("writing PNG {}", path.display()))
}
