//! D8 hydrology: depression filling, flow direction, flow accumulation,
//! stream extraction, buffered stream masks, and segmentation metrics.
//!
//! Direction codes follow the usual power-of-two layout, clockwise from
//! east: 1=E, 2=SE, 4=S, 8=SW, 16=W, 32=NW, 64=N, 128=NE. Code 0 marks a
//! cell that drains off-grid (or a nodata cell).

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::raster::RasterGrid;

/// Minimum climb applied while filling so every filled cell keeps a strictly
/// descending D8 path to the boundary.
pub const FILL_EPSILON: f64 = 1e-4;

/// (code, dr, dc, distance-in-cells) for the eight neighbors, ascending code.
pub const D8_NEIGHBORS: [(u8, isize, isize, f64); 8] = [
    (1, 0, 1, 1.0),
    (2, 1, 1, core::f64::consts::SQRT_2),
    (4, 1, 0, 1.0),
    (8, 1, -1, core::f64::consts::SQRT_2),
    (16, 0, -1, 1.0),
    (32, -1, -1, core::f64::consts::SQRT_2),
    (64, -1, 0, 1.0),
    (128, -1, 1, core::f64::consts::SQRT_2),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HydroError {
    DimMismatch,
    NoValidCells,
    FlowCycle,
}

impl fmt::Display for HydroError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HydroError::DimMismatch => write!(f, "grids have mismatched dimensions"),
            HydroError::NoValidCells => write!(f, "no valid cells"),
            HydroError::FlowCycle => write!(f, "flow directions contain a cycle"),
        }
    }
}

impl From<HydroError> for String {
    fn from(e: HydroError) -> String {
        alloc::format!("{e}")
    }
}

/// D8 direction codes per cell, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowDirections {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u8>,
    /// False for nodata cells, which carry code 0 and take no part in routing.
    pub valid: Vec<bool>,
}

/// Upstream contributing cell counts (self excluded), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowAccumulation {
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<u32>,
}

/// Boolean cell mask, row-major. Used for streams and their buffers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamMask {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapCell {
    z: f64,
    idx: usize,
}

impl Eq for HeapCell {}

impl Ord for HeapCell {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on elevation; index breaks ties deterministically
        other
            .z
            .partial_cmp(&self.z)
            .unwrap_or(Ordering::Equal)
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-flood depression filling. Every interior sink is raised until
/// it drains, with [`FILL_EPSILON`] of extra climb per step so the result
/// has no flats inside former depressions. Nodata cells pass through.
pub fn fill_depressions(dem: &RasterGrid) -> Result<RasterGrid, HydroError> {
    let (rows, cols) = (dem.rows, dem.cols);
    let n = rows * cols;
    // the climb is applied in f32 so filling is bit-exactly idempotent:
    // rounding once through f64 would shift epsilon chains on a refill
    let eps = FILL_EPSILON as f32;
    let mut filled: Vec<f32> = dem.values.clone();
    let mut visited = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut any_valid = false;

    let seed = |idx: usize,
                    heap: &mut BinaryHeap<HeapCell>,
                    visited: &mut Vec<bool>,
                    any_valid: &mut bool| {
        if !visited[idx] && dem.values[idx] != dem.nodata {
            visited[idx] = true;
            *any_valid = true;
            heap.push(HeapCell {
                z: dem.values[idx] as f64,
                idx,
            });
        }
    };

    // boundary cells plus cells adjacent to nodata act as outlets
    for r in 0..rows {
        for c in 0..cols {
            let idx = r * cols + c;
            if dem.values[idx] == dem.nodata {
                visited[idx] = true;
                continue;
            }
            let on_edge = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
            let next_to_nodata = D8_NEIGHBORS.iter().any(|&(_, dr, dc, _)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                nr >= 0
                    && nc >= 0
                    && (nr as usize) < rows
                    && (nc as usize) < cols
                    && dem.values[nr as usize * cols + nc as usize] == dem.nodata
            });
            if on_edge || next_to_nodata {
                seed(idx, &mut heap, &mut visited, &mut any_valid);
            }
        }
    }
    if !any_valid {
        return Err(HydroError::NoValidCells);
    }

    while let Some(HeapCell { z, idx }) = heap.pop() {
        let (r, c) = (idx / cols, idx % cols);
        for &(_, dr, dc, _) in &D8_NEIGHBORS {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
                continue;
            }
            let nidx = nr as usize * cols + nc as usize;
            if visited[nidx] {
                continue;
            }
            visited[nidx] = true;
            let raised = (z as f32 + eps).max(filled[nidx]);
            filled[nidx] = raised;
            heap.push(HeapCell {
                z: raised as f64,
                idx: nidx,
            });
        }
    }

    let values: Vec<f32> = filled
        .iter()
        .zip(&dem.values)
        .map(|(&f, &orig)| if orig == dem.nodata { orig } else { f })
        .collect();
    Ok(dem.like(values))
}

/// Steepest-descent D8 directions: drop divided by distance, diagonal
/// distance sqrt(2). Ties resolve to the smallest code. Cells with no lower
/// in-grid neighbor get code 0 (off-grid drainage at the boundary).
pub fn d8_flow_direction(dem: &RasterGrid) -> FlowDirections {
    let (rows, cols) = (dem.rows, dem.cols);
    let mut codes = vec![0u8; rows * cols];
    let mut valid = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let idx = r * cols + c;
            let z = dem.values[idx];
            if z == dem.nodata {
                continue;
            }
            valid[idx] = true;
            let mut best_code = 0u8;
            let mut best_slope = 0.0f64;
            for &(code, dr, dc, dist) in &D8_NEIGHBORS {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
                    continue;
                }
                let nz = dem.values[nr as usize * cols + nc as usize];
                if nz == dem.nodata {
                    continue;
                }
                let slope = (z as f64 - nz as f64) / dist;
                if slope > best_slope {
                    best_slope = slope;
                    best_code = code;
                }
            }
            codes[idx] = best_code;
        }
    }
    FlowDirections {
        rows,
        cols,
        codes,
        valid,
    }
}

fn receiver(dirs: &FlowDirections, idx: usize) -> Option<usize> {
    let code = dirs.codes[idx];
    if code == 0 {
        return None;
    }
    let (r, c) = (idx / dirs.cols, idx % dirs.cols);
    let &(_, dr, dc, _) = D8_NEIGHBORS.iter().find(|&&(k, ..)| k == code)?;
    let (nr, nc) = (r as isize + dr, c as isize + dc);
    if nr < 0 || nc < 0 || nr as usize >= dirs.rows || nc as usize >= dirs.cols {
        return None;
    }
    let nidx = nr as usize * dirs.cols + nc as usize;
    dirs.valid[nidx].then_some(nidx)
}

/// Contributing-area counts by topological sweep over the flow graph.
/// Each cell's count excludes the cell itself. A cycle in the directions
/// (impossible for directions derived from a filled DEM) is an error.
pub fn flow_accumulation(dirs: &FlowDirections) -> Result<FlowAccumulation, HydroError> {
    let n = dirs.rows * dirs.cols;
    let mut indegree = vec![0u32; n];
    for idx in 0..n {
        if !dirs.valid[idx] {
            continue;
        }
        if let Some(recv) = receiver(dirs, idx) {
            indegree[recv] += 1;
        }
    }
    let mut counts = vec![0u32; n];
    let mut queue: Vec<usize> = (0..n)
        .filter(|&i| dirs.valid[i] && indegree[i] == 0)
        .collect();
    let mut processed = 0usize;
    let total_valid = dirs.valid.iter().filter(|&&v| v).count();
    let mut head = 0;
    while head < queue.len() {
        let idx = queue[head];
        head += 1;
        processed += 1;
        if let Some(recv) = receiver(dirs, idx) {
            counts[recv] += counts[idx] + 1;
            indegree[recv] -= 1;
            if indegree[recv] == 0 {
                queue.push(recv);
            }
        }
    }
    if processed != total_valid {
        return Err(HydroError::FlowCycle);
    }
    Ok(FlowAccumulation {
        rows: dirs.rows,
        cols: dirs.cols,
        counts,
    })
}

/// Cells whose contributing count reaches `threshold`.
pub fn extract_streams(acc: &FlowAccumulation, threshold: usize) -> StreamMask {
    StreamMask {
        rows: acc.rows,
        cols: acc.cols,
        mask: acc
            .counts
            .iter()
            .map(|&c| c as usize >= threshold)
            .collect(),
    }
}

/// 1-D squared Euclidean distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        if s > z[k] {
            k += 1;
        }
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k] as f64;
        out[q] = (q as f64 - p) * (q as f64 - p) + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in cells) to the nearest true cell.
/// Cells already true get 0; an all-false mask gets infinity everywhere.
pub fn distance_transform(mask: &StreamMask) -> Vec<f64> {
    let (rows, cols) = (mask.rows, mask.cols);
    let inf = 1e18;
    let mut d: Vec<f64> = mask
        .mask
        .iter()
        .map(|&m| if m { 0.0 } else { inf })
        .collect();
    let mut col_in = vec![0.0; rows];
    let mut col_out = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            col_in[r] = d[r * cols + c];
        }
        edt_1d(&col_in, &mut col_out);
        for r in 0..rows {
            d[r * cols + c] = col_out[r];
        }
    }
    let mut row_out = vec![0.0; cols];
    for r in 0..rows {
        edt_1d(&d[r * cols..(r + 1) * cols].to_vec(), &mut row_out);
        d[r * cols..(r + 1) * cols].copy_from_slice(&row_out);
    }
    d
}

/// Dilate a mask to all cells within `radius` map units of a true cell.
pub fn buffer_mask(mask: &StreamMask, radius: f64, cell_size: f64) -> StreamMask {
    let d2 = distance_transform(mask);
    let limit = if cell_size > 0.0 { radius / cell_size } else { 0.0 };
    let limit2 = limit * limit;
    StreamMask {
        rows: mask.rows,
        cols: mask.cols,
        mask: d2.iter().map(|&d| d <= limit2).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pixel-wise overlap metrics of `pred` against `truth`. An empty union
/// scores IoU 1 (two empty masks agree perfectly); other zero denominators
/// score 0.
pub fn segmentation_metrics(
    pred: &StreamMask,
    truth: &StreamMask,
) -> Result<SegmentationMetrics, HydroError> {
    if pred.rows != truth.rows || pred.cols != truth.cols {
        return Err(HydroError::DimMismatch);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in pred.mask.iter().zip(&truth.mask) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let union = tp + fp + fn_;
    let iou = if union == 0 {
        1.0
    } else {
        tp as f64 / union as f64
    };
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SegmentationMetrics {
        tp,
        fp,
        fn_,
        iou,
        precision,
        recall,
        f1,
    })
}
