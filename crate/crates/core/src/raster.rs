//! Geo-referenced raster container, the ".r32g" byte codec, resampling,
//! and overlapping tiling.
//!
//! Conventions fixed here and relied on everywhere else:
//! - rows index north-to-south: row `r`, col `c` sits at geographic
//!   position `(origin_x + (c + 0.5) * cell, origin_y - (r + 0.5) * cell)`
//!   with `origin` the outer corner of pixel (0, 0).
//! - Resampling aligns pixel *centers* of output to pixel centers of input,
//!   which makes bilinear interpolation exact on affine fields.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub const R32G_MAGIC: [u8; 4] = *b"R32G";

/// Default nodata sentinel.
pub const NODATA: f32 = -99999.0;

/// Geo-referenced 2-D elevation/image plane with a nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub rows: usize,
    pub cols: usize,
    /// Meters per pixel, > 0.
    pub cell_size: f64,
    /// Upper-left corner of the grid, meters.
    pub origin_x: f64,
    pub origin_y: f64,
    pub nodata: f32,
    /// Row-major, length rows * cols.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RasterError {
    BadDims { rows: usize, cols: usize },
    BadCellSize,
    LengthMismatch { expected: usize, got: usize },
    NonFiniteValue { index: usize },
    BadMagic,
    Truncated { needed: usize, got: usize },
    NonFiniteHeader(&'static str),
    BadArgument(String),
}

impl fmt::Display for RasterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RasterError::BadDims { rows, cols } => {
                write!(f, "invalid raster dims {rows}x{cols}")
            }
            RasterError::BadCellSize => write!(f, "cell_size must be finite and > 0"),
            RasterError::LengthMismatch { expected, got } => {
                write!(f, "value buffer length {got}, expected {expected}")
            }
            RasterError::NonFiniteValue { index } => {
                write!(f, "non-finite non-nodata value at index {index}")
            }
            RasterError::BadMagic => write!(f, "bad magic: not an R32G raster"),
            RasterError::Truncated { needed, got } => {
                write!(f, "truncated raster payload: needed {needed} bytes, got {got}")
            }
            RasterError::NonFiniteHeader(field) => {
                write!(f, "non-finite header field {field}")
            }
            RasterError::BadArgument(msg) => write!(f, "{msg}"),
        }
    }
}

impl RasterGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        cell_size: f64,
        origin_x: f64,
        origin_y: f64,
        nodata: f32,
        values: Vec<f32>,
    ) -> Result<Self, RasterError> {
        if rows < 1 || cols < 1 {
            return Err(RasterError::BadDims { rows, cols });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(RasterError::BadCellSize);
        }
        if values.len() != rows * cols {
            return Err(RasterError::LengthMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if v != nodata && !v.is_finite() {
                return Err(RasterError::NonFiniteValue { index: i });
            }
        }
        Ok(RasterGrid {
            rows,
            cols,
            cell_size,
            origin_x,
            origin_y,
            nodata,
            values,
        })
    }

    /// Grid filled with a constant, unit georeference at (0, 0).
    pub fn constant(rows: usize, cols: usize, value: f32) -> Self {
        RasterGrid {
            rows,
            cols,
            cell_size: 1.0,
            origin_x: 0.0,
            origin_y: 0.0,
            nodata: NODATA,
            values: vec![value; rows * cols],
        }
    }

    /// Same georeference and dims, different values.
    pub fn like(&self, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), self.rows * self.cols);
        RasterGrid {
            values,
            ..self.clone()
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.cols + col] = v;
    }

    #[inline]
    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.at(row, col) == self.nodata
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        let nd = self.nodata;
        self.values.iter().copied().filter(move |&v| v != nd)
    }
}

// ---------------------------------------------------------------------------
// Byte codec

/// Serialize to the R32G byte layout: magic, u32 rows, u32 cols,
/// f64 cell_size, f64 origin_x, f64 origin_y, f32 nodata, f32 values,
/// all little-endian.
pub fn encode_raster(grid: &RasterGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + 4 * grid.values.len());
    out.extend_from_slice(&R32G_MAGIC);
    out.extend_from_slice(&(grid.rows as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols as u32).to_le_bytes());
    out.extend_from_slice(&grid.cell_size.to_le_bytes());
    out.extend_from_slice(&grid.origin_x.to_le_bytes());
    out.extend_from_slice(&grid.origin_y.to_le_bytes());
    out.extend_from_slice(&grid.nodata.to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterGrid, RasterError> {
    if bytes.len() < 4 {
        return Err(RasterError::Truncated {
            needed: 4,
            got: bytes.len(),
        });
    }
    if bytes[..4] != R32G_MAGIC {
        return Err(RasterError::BadMagic);
    }
    const HEADER: usize = 4 + 4 + 4 + 8 + 8 + 8 + 4;
    if bytes.len() < HEADER {
        return Err(RasterError::Truncated {
            needed: HEADER,
            got: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let rows = u32_at(4) as usize;
    let cols = u32_at(8) as usize;
    let cell_size = f64_at(12);
    let origin_x = f64_at(20);
    let origin_y = f64_at(28);
    let nodata = f32_at(36);
    if !cell_size.is_finite() || cell_size <= 0.0 {
        return Err(RasterError::NonFiniteHeader("cell_size"));
    }
    if !origin_x.is_finite() {
        return Err(RasterError::NonFiniteHeader("origin_x"));
    }
    if !origin_y.is_finite() {
        return Err(RasterError::NonFiniteHeader("origin_y"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or(RasterError::BadDims { rows, cols })?;
    let needed = HEADER + 4 * n;
    if bytes.len() < needed {
        return Err(RasterError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        values.push(f32_at(HEADER + 4 * i));
    }
    RasterGrid::new(rows, cols, cell_size, origin_x, origin_y, nodata, values)
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear interpolation weights for pixel-center alignment: the first and
/// last output pixel centers map onto the first and last input pixel
/// centers, interior centers linearly in between
/// (`pos = i_out * (n_in - 1) / (n_out - 1)`).
/// Returns (lo index, hi index, weight of hi).
#[inline]
pub fn center_align(i_out: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let pos = if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        i_out as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    };
    let pos = pos.clamp(0.0, (n_in - 1) as f64);
    let lo = num_traits::Float::floor(pos) as usize;
    let hi = core::cmp::min(lo + 1, n_in - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resample with pixel-center alignment over the same geographic
/// extent. Output pixels touching any nodata input neighbor become nodata.
pub fn bilinear_resample(
    grid: &RasterGrid,
    out_rows: usize,
    out_cols: usize,
) -> Result<RasterGrid, RasterError> {
    if out_rows < 1 || out_cols < 1 {
        return Err(RasterError::BadDims {
            rows: out_rows,
            cols: out_cols,
        });
    }
    let mut values = vec![0f32; out_rows * out_cols];
    for r in 0..out_rows {
        let (r0, r1, fr) = center_align(r, grid.rows, out_rows);
        for c in 0..out_cols {
            let (c0, c1, fc) = center_align(c, grid.cols, out_cols);
            let v00 = grid.at(r0, c0);
            let v01 = grid.at(r0, c1);
            let v10 = grid.at(r1, c0);
            let v11 = grid.at(r1, c1);
            let nd = grid.nodata;
            values[r * out_cols + c] = if v00 == nd || v01 == nd || v10 == nd || v11 == nd {
                nd
            } else {
                let top = v00 as f64 * (1.0 - fc) + v01 as f64 * fc;
                let bot = v10 as f64 * (1.0 - fc) + v11 as f64 * fc;
                (top * (1.0 - fr) + bot * fr) as f32
            };
        }
    }
    Ok(RasterGrid {
        rows: out_rows,
        cols: out_cols,
        cell_size: grid.cell_size * grid.rows as f64 / out_rows as f64,
        origin_x: grid.origin_x,
        origin_y: grid.origin_y,
        nodata: grid.nodata,
        values,
    })
}

/// Block-mean downsample; rows and cols must be divisible by `factor`.
pub fn average_downsample(grid: &RasterGrid, factor: usize) -> Result<RasterGrid, RasterError> {
    if factor == 0 || grid.rows % factor != 0 || grid.cols % factor != 0 {
        return Err(RasterError::BadArgument(format!(
            "dims {}x{} not divisible by factor {factor}",
            grid.rows, grid.cols
        )));
    }
    let out_rows = grid.rows / factor;
    let out_cols = grid.cols / factor;
    let mut values = vec![0f32; out_rows * out_cols];
    for r in 0..out_rows {
        for c in 0..out_cols {
            let mut sum = 0f64;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += grid.at(r * factor + dr, c * factor + dc) as f64;
                }
            }
            values[r * out_cols + c] = (sum / (factor * factor) as f64) as f32;
        }
    }
    Ok(RasterGrid {
        rows: out_rows,
        cols: out_cols,
        cell_size: grid.cell_size * factor as f64,
        origin_x: grid.origin_x,
        origin_y: grid.origin_y,
        nodata: grid.nodata,
        values,
    })
}

// ---------------------------------------------------------------------------
// Tiling

/// Decomposition of a raster into overlapping fixed-size tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub tile_size: usize,
    pub overlap: usize,
    /// Row-major (row_offset, col_offset) placements, each tile fully inside
    /// the source grid.
    pub placements: Vec<(usize, usize)>,
}

fn axis_offsets(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut offs = Vec::new();
    let mut pos = 0usize;
    loop {
        if pos + tile >= extent {
            offs.push(extent - tile); // clamp last placement inward
            break;
        }
        offs.push(pos);
        pos += stride;
    }
    offs
}

pub fn make_tile_plan(
    grid: &RasterGrid,
    tile_size: usize,
    overlap: usize,
) -> Result<TilePlan, RasterError> {
    if tile_size < 1 || tile_size > grid.rows.min(grid.cols) {
        return Err(RasterError::BadArgument(format!(
            "tile_size {tile_size} exceeds grid {}x{}",
            grid.rows, grid.cols
        )));
    }
    if overlap >= tile_size {
        return Err(RasterError::BadArgument(format!(
            "overlap {overlap} must be < tile_size {tile_size}"
        )));
    }
    let stride = tile_size - overlap;
    let row_offs = axis_offsets(grid.rows, tile_size, stride);
    let col_offs = axis_offsets(grid.cols, tile_size, stride);
    let mut placements = Vec::with_capacity(row_offs.len() * col_offs.len());
    for &r in &row_offs {
        for &c in &col_offs {
            placements.push((r, c));
        }
    }
    Ok(TilePlan {
        tile_size,
        overlap,
        placements,
    })
}

pub fn extract_tile(
    grid: &RasterGrid,
    placement: (usize, usize),
    tile_size: usize,
) -> Result<RasterGrid, RasterError> {
    let (r0, c0) = placement;
    if r0 + tile_size > grid.rows || c0 + tile_size > grid.cols {
        return Err(RasterError::BadArgument(format!(
            "tile {tile_size} at ({r0},{c0}) out of bounds for {}x{}",
            grid.rows, grid.cols
        )));
    }
    let mut values = Vec::with_capacity(tile_size * tile_size);
    for r in 0..tile_size {
        let base = (r0 + r) * grid.cols + c0;
        values.extend_from_slice(&grid.values[base..base + tile_size]);
    }
    Ok(RasterGrid {
        rows: tile_size,
        cols: tile_size,
        cell_size: grid.cell_size,
        // rows grow southward, so the tile's upper-left moves down by
        // r0 * cell and east by c0 * cell
        origin_x: grid.origin_x + c0 as f64 * grid.cell_size,
        origin_y: grid.origin_y - r0 as f64 * grid.cell_size,
        nodata: grid.nodata,
        values,
    })
}
