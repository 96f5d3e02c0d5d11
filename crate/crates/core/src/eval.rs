//! Elevation/slope/aspect error metrics, terrain derivatives, elevation
//! distribution statistics, and the combined comparison report.
//!
//! Derivative convention: `x` grows with columns (east), `y` grows north,
//! rows grow south, so `dz/dy = -(z[r+1] - z[r-1]) / (2 cell)`. Central
//! differences on interior cells, one-sided at edges. Aspect is the compass
//! direction of steepest descent, degrees clockwise from north in [0, 360).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::hydro::{self, SegmentationMetrics};
use crate::raster::RasterGrid;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    DimMismatch,
    EmptyRegion,
    TooFewCells { needed: usize, got: usize },
    Hydrology(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::DimMismatch => write!(f, "grids have mismatched dimensions"),
            EvalError::EmptyRegion => write!(f, "no valid cells in evaluation region"),
            EvalError::TooFewCells { needed, got } => {
                write!(f, "need at least {needed} valid cells, got {got}")
            }
            EvalError::Hydrology(msg) => write!(f, "hydrology pipeline failed: {msg}"),
        }
    }
}

fn check_dims(a: &RasterGrid, b: &RasterGrid) -> Result<(), EvalError> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(EvalError::DimMismatch);
    }
    Ok(())
}

fn region_cells<'a>(
    truth: &'a RasterGrid,
    pred: &'a RasterGrid,
    region: Option<&'a [bool]>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    truth
        .values
        .iter()
        .zip(&pred.values)
        .enumerate()
        .filter(move |(i, (&t, &p))| {
            t != truth.nodata && p != pred.nodata && region.map_or(true, |m| m[*i])
        })
        .map(|(_, (&t, &p))| (t as f64, p as f64))
}

/// Mean absolute error over region cells; nodata excluded.
pub fn mae(
    truth: &RasterGrid,
    pred: &RasterGrid,
    region: Option<&[bool]>,
) -> Result<f64, EvalError> {
    check_dims(truth, pred)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, p) in region_cells(truth, pred, region) {
        sum += (t - p).abs();
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Root mean square error over region cells; nodata excluded.
pub fn rmse(
    truth: &RasterGrid,
    pred: &RasterGrid,
    region: Option<&[bool]>,
) -> Result<f64, EvalError> {
    check_dims(truth, pred)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, p) in region_cells(truth, pred, region) {
        sum += (t - p) * (t - p);
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyRegion);
    }
    Ok((sum / n as f64).sqrt())
}

/// Per-cell gradient (dz/dx eastward, dz/dy northward). Returns None when
/// the stencil touches nodata.
pub fn gradient_at(dem: &RasterGrid, r: usize, c: usize) -> Option<(f64, f64)> {
    let cell = dem.cell_size;
    let val = |rr: usize, cc: usize| -> Option<f64> {
        let v = dem.at(rr, cc);
        (v != dem.nodata).then_some(v as f64)
    };
    let dzdx = if dem.cols == 1 {
        0.0
    } else if c == 0 {
        (val(r, 1)? - val(r, 0)?) / cell
    } else if c == dem.cols - 1 {
        (val(r, c)? - val(r, c - 1)?) / cell
    } else {
        (val(r, c + 1)? - val(r, c - 1)?) / (2.0 * cell)
    };
    // rows grow southward: northward derivative flips sign
    let dzdy = if dem.rows == 1 {
        0.0
    } else if r == 0 {
        -(val(1, c)? - val(0, c)?) / cell
    } else if r == dem.rows - 1 {
        -(val(r, c)? - val(r - 1, c)?) / cell
    } else {
        -(val(r + 1, c)? - val(r - 1, c)?) / (2.0 * cell)
    };
    Some((dzdx, dzdy))
}

/// Slope in degrees: atan of the gradient magnitude.
pub fn slope_map(dem: &RasterGrid) -> RasterGrid {
    let mut values = vec![dem.nodata; dem.rows * dem.cols];
    for r in 0..dem.rows {
        for c in 0..dem.cols {
            if let Some((gx, gy)) = gradient_at(dem, r, c) {
                let mag = (gx * gx + gy * gy).sqrt();
                values[r * dem.cols + c] = mag.atan().to_degrees() as f32;
            }
        }
    }
    dem.like(values)
}

/// Aspect in degrees clockwise from north, direction of steepest descent.
/// Flat cells (both partials exactly zero) are nodata.
pub fn aspect_map(dem: &RasterGrid) -> RasterGrid {
    let mut values = vec![dem.nodata; dem.rows * dem.cols];
    for r in 0..dem.rows {
        for c in 0..dem.cols {
            if let Some((gx, gy)) = gradient_at(dem, r, c) {
                if gx == 0.0 && gy == 0.0 {
                    continue;
                }
                // compass angle of the descent vector (-gx, -gy)
                let mut deg = f64::atan2(-gx, -gy).to_degrees();
                if deg < 0.0 {
                    deg += 360.0;
                }
                if deg >= 360.0 {
                    deg -= 360.0;
                }
                values[r * dem.cols + c] = deg as f32;
            }
        }
    }
    dem.like(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AspectDiff {
    /// min(|a-b|, 360-|a-b|), the geometric angle between directions.
    Circular,
    /// plain |a-b|, for sensitivity analysis only.
    Linear,
}

/// MAE/RMSE of the per-cell aspect difference. Cells where either aspect is
/// nodata (flats) are excluded.
pub fn aspect_error(
    truth_aspect: &RasterGrid,
    pred_aspect: &RasterGrid,
    region: Option<&[bool]>,
    mode: AspectDiff,
) -> Result<(f64, f64), EvalError> {
    check_dims(truth_aspect, pred_aspect)?;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut n = 0usize;
    for (a, b) in region_cells(truth_aspect, pred_aspect, region) {
        let raw = (a - b).abs();
        let d = match mode {
            AspectDiff::Circular => raw.min(360.0 - raw),
            AspectDiff::Linear => raw,
        };
        sum += d;
        sumsq += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyRegion);
    }
    Ok((sum / n as f64, (sumsq / n as f64).sqrt()))
}

/// Elevation distribution statistics: Pearson (non-excess) kurtosis and
/// Sarle's bimodality coefficient in population form.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator).
    pub std: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub bimodality: Option<f64>,
    /// True when variance is zero and the higher moments are undefined.
    pub degenerate: bool,
}

pub fn distribution_stats(dem: &RasterGrid) -> Result<DistributionStats, EvalError> {
    let vals: Vec<f64> = dem.valid_values().map(|v| v as f64).collect();
    let n = vals.len();
    if n < 4 {
        return Err(EvalError::TooFewCells { needed: 4, got: n });
    }
    let nf = n as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &v in &vals {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 == 0.0 {
        return Ok(DistributionStats {
            count: n,
            mean,
            std: 0.0,
            skewness: None,
            kurtosis: None,
            bimodality: None,
            degenerate: true,
        });
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    Ok(DistributionStats {
        count: n,
        mean,
        std: (m2 * nf / (nf - 1.0)).sqrt(),
        skewness: Some(skew),
        kurtosis: Some(kurt),
        bimodality: Some((skew * skew + 1.0) / kurt),
        degenerate: false,
    })
}

/// MAE + RMSE pair for one quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPair {
    pub mae: f64,
    pub rmse: f64,
}

/// Elevation/slope/aspect errors of one DEM against truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DemErrors {
    pub elevation: ErrorPair,
    pub slope: ErrorPair,
    pub aspect: ErrorPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamComparison {
    pub radius_cells: f64,
    pub candidate: SegmentationMetrics,
    pub baseline: SegmentationMetrics,
}

/// Stream-network evaluation settings for [`compare_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    /// Accumulation threshold as a fraction of total cell count.
    pub threshold_frac: f64,
    /// Buffer radii in cells.
    pub radii_cells: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub candidate: DemErrors,
    pub baseline: DemErrors,
    pub region_cells: usize,
    pub truth_stats: DistributionStats,
    pub candidate_stats: DistributionStats,
    pub streams: Vec<StreamComparison>,
}

fn dem_errors(
    truth: &RasterGrid,
    pred: &RasterGrid,
    region: Option<&[bool]>,
) -> Result<DemErrors, EvalError> {
    let elev = ErrorPair {
        mae: mae(truth, pred, region)?,
        rmse: rmse(truth, pred, region)?,
    };
    let ts = slope_map(truth);
    let ps = slope_map(pred);
    let slope = ErrorPair {
        mae: mae(&ts, &ps, region)?,
        rmse: rmse(&ts, &ps, region)?,
    };
    let ta = aspect_map(truth);
    let pa = aspect_map(pred);
    let (amae, armse) = match aspect_error(&ta, &pa, region, AspectDiff::Circular) {
        Ok(pair) => pair,
        // all-flat DEMs have no aspect anywhere; report zero error
        Err(EvalError::EmptyRegion) => (0.0, 0.0),
        Err(e) => return Err(e),
    };
    Ok(DemErrors {
        elevation: elev,
        slope,
        aspect: ErrorPair {
            mae: amae,
            rmse: armse,
        },
    })
}

fn stream_mask_for(dem: &RasterGrid, threshold: usize) -> Result<hydro::StreamMask, EvalError> {
    let filled = hydro::fill_depressions(dem).map_err(|e| EvalError::Hydrology(e.into()))?;
    let dirs = hydro::d8_flow_direction(&filled);
    let acc = hydro::flow_accumulation(&dirs).map_err(|e| EvalError::Hydrology(e.into()))?;
    Ok(hydro::extract_streams(&acc, threshold))
}

/// Full candidate-vs-baseline comparison against truth: elevation, slope,
/// aspect errors (over `region` when given), distribution statistics, and
/// optionally stream-network segmentation metrics at each buffer radius.
pub fn compare_report(
    truth: &RasterGrid,
    candidate: &RasterGrid,
    baseline: &RasterGrid,
    region: Option<&[bool]>,
    stream_config: Option<&StreamConfig>,
) -> Result<EvalReport, EvalError> {
    check_dims(truth, candidate)?;
    check_dims(truth, baseline)?;
    let region_count = match region {
        Some(m) => m.iter().filter(|&&x| x).count(),
        None => truth.rows * truth.cols,
    };
    if region_count == 0 {
        return Err(EvalError::EmptyRegion);
    }
    let mut streams = Vec::new();
    if let Some(cfg) = stream_config {
        let total = truth.rows * truth.cols;
        let threshold = ((total as f64 * cfg.threshold_frac).ceil() as usize).max(1);
        let truth_mask = stream_mask_for(truth, threshold)?;
        let cand_mask = stream_mask_for(candidate, threshold)?;
        let base_mask = stream_mask_for(baseline, threshold)?;
        for &radius in &cfg.radii_cells {
            let meters = radius * truth.cell_size;
            let tb = hydro::buffer_mask(&truth_mask, meters, truth.cell_size);
            let cb = hydro::buffer_mask(&cand_mask, meters, truth.cell_size);
            let bb = hydro::buffer_mask(&base_mask, meters, truth.cell_size);
            streams.push(StreamComparison {
                radius_cells: radius,
                candidate: hydro::segmentation_metrics(&cb, &tb)
                    .map_err(|e| EvalError::Hydrology(e.into()))?,
                baseline: hydro::segmentation_metrics(&bb, &tb)
                    .map_err(|e| EvalError::Hydrology(e.into()))?,
            });
        }
    }
    Ok(EvalReport {
        candidate: dem_errors(truth, candidate, region)?,
        baseline: dem_errors(truth, baseline, region)?,
        region_cells: region_count,
        truth_stats: distribution_stats(truth)?,
        candidate_stats: distribution_stats(candidate)?,
        streams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn grid(rows: usize, cols: usize, vals: &[f32]) -> RasterGrid {
        RasterGrid::constant(rows, cols, 0.0).like(vals.to_vec())
    }

    #[test]
    fn mae_rmse_hand_values() {
        let t = grid(1, 2, &[0.0, 0.0]);
        let p = grid(1, 2, &[1.0, 3.0]);
        assert_eq!(mae(&t, &p, None).unwrap(), 2.0);
        assert!((rmse(&t, &p, None).unwrap() - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_errors() {
        let t = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = grid(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(mae(&t, &p, None).unwrap(), 2.0);
        assert_eq!(rmse(&t, &p, None).unwrap(), 2.0);
    }

    #[test]
    fn empty_region_rejected() {
        let t = grid(1, 1, &[0.0]);
        let region = [false];
        assert_eq!(mae(&t, &t, Some(&region)), Err(EvalError::EmptyRegion));
    }

    #[test]
    fn region_mask_excludes_poisoned_cells() {
        let t = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let clean = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let poisoned = grid(2, 2, &[1.0, 2.0, 99999.0, -5000.0]);
        let region = [true, true, false, false];
        assert_eq!(
            mae(&t, &poisoned, Some(&region)).unwrap(),
            mae(&t, &clean, Some(&region)).unwrap()
        );
    }

    #[test]
    fn slope_of_flat_is_zero_and_45_for_unit_plane() {
        let flat = RasterGrid::constant(4, 4, 10.0);
        assert!(slope_map(&flat).values.iter().all(|&v| v == 0.0));

        // z = x (unit cell): slope 45 degrees everywhere
        let vals: Vec<f32> = (0..16).map(|k| (k % 4) as f32).collect();
        let plane = grid(4, 4, &vals);
        let s = slope_map(&plane);
        for &v in &s.values {
            assert!((v - 45.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn slope_of_diagonal_plane() {
        // dz/dx = dz/dy = 1 -> atan(sqrt(2)) = 54.7356...
        // rows grow south, so z = x - y means z = col + row in grid indexing
        let vals: Vec<f32> = (0..25).map(|k| ((k / 5) + (k % 5)) as f32).collect();
        let plane = grid(5, 5, &vals);
        let s = slope_map(&plane);
        let expect = 2.0f64.sqrt().atan().to_degrees();
        assert!((s.at(2, 2) as f64 - expect).abs() < 1e-4);
    }

    #[test]
    fn aspect_conventions() {
        // increasing east -> descent west -> 270
        let east: Vec<f32> = (0..16).map(|k| (k % 4) as f32).collect();
        let a = aspect_map(&grid(4, 4, &east));
        assert!((a.at(1, 1) - 270.0).abs() < 1e-4);

        // increasing north (decreasing row index) -> descent south -> 180
        let north: Vec<f32> = (0..16).map(|k| (3 - k / 4) as f32).collect();
        let a = aspect_map(&grid(4, 4, &north));
        assert!((a.at(1, 1) - 180.0).abs() < 1e-4);
    }

    #[test]
    fn flat_aspect_is_nodata() {
        let flat = RasterGrid::constant(3, 3, 5.0);
        let a = aspect_map(&flat);
        assert!(a.values.iter().all(|&v| v == a.nodata));
    }

    #[test]
    fn aspect_error_circular_wrap() {
        let a = grid(1, 1, &[350.0]);
        let b = grid(1, 1, &[10.0]);
        let (mae_d, _) = aspect_error(&a, &b, None, AspectDiff::Circular).unwrap();
        assert!((mae_d - 20.0).abs() < 1e-9);
    }

    #[test]
    fn aspect_error_hand_case() {
        // {0, 90} vs {180, 90}: diffs {180, 0} -> MAE 90, RMSE sqrt(16200)
        let a = grid(1, 2, &[0.0, 90.0]);
        let b = grid(1, 2, &[180.0, 90.0]);
        let (m, r) = aspect_error(&a, &b, None, AspectDiff::Circular).unwrap();
        assert!((m - 90.0).abs() < 1e-9);
        assert!((r - 16200.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn aspect_error_symmetric_and_bounded() {
        let mut r = rng::seeded(11, 0);
        let av: Vec<f32> = (0..32).map(|_| rng::uniform_range(&mut r, 0.0, 360.0) as f32).collect();
        let bv: Vec<f32> = (0..32).map(|_| rng::uniform_range(&mut r, 0.0, 360.0) as f32).collect();
        let a = grid(4, 8, &av);
        let b = grid(4, 8, &bv);
        let (m1, r1) = aspect_error(&a, &b, None, AspectDiff::Circular).unwrap();
        let (m2, r2) = aspect_error(&b, &a, None, AspectDiff::Circular).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(m1 <= 180.0 && r1 <= 180.0);
    }

    #[test]
    fn stats_two_point_distribution() {
        let vals = [-1.0f32, 1.0, -1.0, 1.0];
        let s = distribution_stats(&grid(2, 2, &vals)).unwrap();
        assert!(s.skewness.unwrap().abs() < 1e-12);
        assert!((s.kurtosis.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.bimodality.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_constant_is_degenerate() {
        let s = distribution_stats(&RasterGrid::constant(3, 3, 7.0)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.std, 0.0);
        assert!(s.kurtosis.is_none());
    }

    #[test]
    fn stats_gaussian_sample() {
        let mut r = rng::seeded(5, 1);
        let vals: Vec<f32> = (0..40_000).map(|_| rng::normal(&mut r) as f32).collect();
        let s = distribution_stats(&grid(200, 200, &vals)).unwrap();
        assert!((s.kurtosis.unwrap() - 3.0).abs() < 0.1, "{:?}", s.kurtosis);
        assert!((s.bimodality.unwrap() - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut r = rng::seeded(9, 2);
        let vals: Vec<f32> = (0..256)
            .map(|_| rng::uniform_range(&mut r, 100.0, 900.0) as f32)
            .collect();
        let g = grid(16, 16, &vals);
        let s = distribution_stats(&g).unwrap();
        // independent two-pass computation in f64
        let xs: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m = |p: i32| xs.iter().map(|&x| (x - mean).powi(p)).sum::<f64>() / n;
        let (m2, m3, m4) = (m(2), m(3), m(4));
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        assert!((s.mean - mean).abs() / mean.abs() < 1e-10);
        assert!((s.skewness.unwrap() - skew).abs() < 1e-10);
        assert!((s.kurtosis.unwrap() - kurt).abs() < 1e-10);
        assert!((s.bimodality.unwrap() - (skew * skew + 1.0) / kurt).abs() < 1e-10);
    }

    #[test]
    fn rmse_at_least_mae_random_pairs() {
        let mut r = rng::seeded(21, 3);
        for _ in 0..200 {
            let tv: Vec<f32> = (0..48).map(|_| rng::normal(&mut r) as f32 * 10.0).collect();
            let pv: Vec<f32> = (0..48).map(|_| rng::normal(&mut r) as f32 * 10.0).collect();
            let t = grid(6, 8, &tv);
            let p = grid(6, 8, &pv);
            assert!(rmse(&t, &p, None).unwrap() >= mae(&t, &p, None).unwrap() - 1e-12);
        }
    }

    #[test]
    fn translation_invariance() {
        let mut r = rng::seeded(31, 4);
        let tv: Vec<f32> = (0..36).map(|_| rng::normal(&mut r) as f32 * 5.0).collect();
        let pv: Vec<f32> = (0..36).map(|_| rng::normal(&mut r) as f32 * 5.0).collect();
        let t = grid(6, 6, &tv);
        let p = grid(6, 6, &pv);
        let t2 = t.like(tv.iter().map(|v| v + 100.0).collect());
        let p2 = p.like(pv.iter().map(|v| v + 100.0).collect());
        assert!((mae(&t, &p, None).unwrap() - mae(&t2, &p2, None).unwrap()).abs() < 1e-5);
        // slope invariant to a global offset, up to f32 quantization of the
        // shifted values
        let s1 = slope_map(&t);
        let s2 = slope_map(&t2);
        for (a, b) in s1.values.iter().zip(&s2.values) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn perfect_candidate_reports_zero() {
        let mut r = rng::seeded(77, 5);
        let tv: Vec<f32> = (0..64)
            .map(|_| 100.0 + rng::normal(&mut r) as f32 * 8.0)
            .collect();
        let truth = grid(8, 8, &tv);
        let baseline = truth.like(tv.iter().map(|v| v + 1.0).collect());
        let rep = compare_report(&truth, &truth, &baseline, None, None).unwrap();
        assert_eq!(rep.candidate.elevation.mae, 0.0);
        assert_eq!(rep.candidate.elevation.rmse, 0.0);
        assert_eq!(rep.candidate.slope.mae, 0.0);
        assert!(rep.baseline.elevation.mae > 0.99);
    }
}
