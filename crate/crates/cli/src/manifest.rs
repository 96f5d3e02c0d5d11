//! JSON manifests and reports shared between subcommands: everything a
//! later pipeline stage (or CI diff) needs to consume a previous stage's
//! outputs.

use anyhow::{Context, Result};
use p2d_core::eval::{DemErrors, DistributionStats, ErrorPair, EvalReport, StreamComparison};
use p2d_core::hydro::SegmentationMetrics;
use p2d_core::raster::RasterGrid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthEntry {
    pub id: usize,
    pub class: String,
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub schema: u32,
    pub seed: u64,
    pub count_per_class: usize,
    pub entries: Vec<SynthEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub schema: u32,
    pub task: String,
    pub class: Option<String>,
    pub weights: String,
    pub config_echo: String,
    pub seed: u64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

/// Georeference of a full raster, embedded in patch manifests so the mosaic
/// stage can rebuild the output grid without the original input.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Extent {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub nodata: f32,
}

impl Extent {
    pub fn of(grid: &RasterGrid) -> Extent {
        Extent {
            rows: grid.rows,
            cols: grid.cols,
            cell_size: grid.cell_size,
            origin_x: grid.origin_x,
            origin_y: grid.origin_y,
            nodata: grid.nodata,
        }
    }

    /// An all-nodata grid with this georeference.
    pub fn empty_grid(&self) -> RasterGrid {
        RasterGrid {
            rows: self.rows,
            cols: self.cols,
            cell_size: self.cell_size,
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            nodata: self.nodata,
            values: vec![self.nodata; self.rows * self.cols],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchEntry {
    pub index: usize,
    pub row0: usize,
    pub col0: usize,
    pub class: String,
    pub weights_key: String,
    pub file: String,
    pub norm_mean: f64,
    pub norm_scale: f64,
    pub probabilities: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementsManifest {
    pub schema: u32,
    pub task: String,
    pub tile_size: usize,
    pub overlap: usize,
    pub extent: Extent,
    pub patches: Vec<PatchEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema: u32,
    pub rows: usize,
    pub cols: usize,
    pub zero_weight_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationJson {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&SegmentationMetrics> for SegmentationJson {
    fn from(m: &SegmentationMetrics) -> Self {
        SegmentationJson {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            iou: m.iou,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HydroMetricsEntry {
    pub radius_cells: f64,
    pub metrics: SegmentationJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HydroReport {
    pub schema: u32,
    pub threshold_cells: usize,
    pub entries: Vec<HydroMetricsEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorPairJson {
    pub mae: f64,
    pub rmse: f64,
}

impl From<&ErrorPair> for ErrorPairJson {
    fn from(p: &ErrorPair) -> Self {
        ErrorPairJson {
            mae: p.mae,
            rmse: p.rmse,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemErrorsJson {
    pub elevation: ErrorPairJson,
    pub slope: ErrorPairJson,
    pub aspect: ErrorPairJson,
}

impl From<&DemErrors> for DemErrorsJson {
    fn from(d: &DemErrors) -> Self {
        DemErrorsJson {
            elevation: (&d.elevation).into(),
            slope: (&d.slope).into(),
            aspect: (&d.aspect).into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsJson {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub bimodality: Option<f64>,
    pub degenerate: bool,
}

impl From<&DistributionStats> for StatsJson {
    fn from(s: &DistributionStats) -> Self {
        StatsJson {
            count: s.count,
            mean: s.mean,
            std: s.std,
            skewness: s.skewness,
            kurtosis: s.kurtosis,
            bimodality: s.bimodality,
            degenerate: s.degenerate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamComparisonJson {
    pub radius_cells: f64,
    pub candidate: SegmentationJson,
    pub baseline: SegmentationJson,
}

impl From<&StreamComparison> for StreamComparisonJson {
    fn from(s: &StreamComparison) -> Self {
        StreamComparisonJson {
            radius_cells: s.radius_cells,
            candidate: (&s.candidate).into(),
            baseline: (&s.baseline).into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReportJson {
    pub schema: u32,
    pub region_cells: usize,
    pub candidate: DemErrorsJson,
    pub baseline: DemErrorsJson,
    pub truth_stats: StatsJson,
    pub candidate_stats: StatsJson,
    pub streams: Vec<StreamComparisonJson>,
}

impl From<&EvalReport> for EvalReportJson {
    fn from(r: &EvalReport) -> Self {
        EvalReportJson {
            schema: SCHEMA_VERSION,
            region_cells: r.region_cells,
            candidate: (&r.candidate).into(),
            baseline: (&r.baseline).into(),
            truth_stats: (&r.truth_stats).into(),
            candidate_stats: (&r.candidate_stats).into(),
            streams: r.streams.iter().map(Into::into).collect(),
        }
    }
}

/// Fixed-layout comparison table: Elevation/Slope/Aspect rows, MAE/RMSE
/// columns, candidate vs baseline.
pub fn format_eval_table(report: &EvalReportJson) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>12} {:>12} {:>12} {:>12}\n",
        "metric", "cand MAE", "cand RMSE", "base MAE", "base RMSE"
    ));
    let rows = [
        ("Elevation", &report.candidate.elevation, &report.baseline.elevation),
        ("Slope", &report.candidate.slope, &report.baseline.slope),
        ("Aspect", &report.candidate.aspect, &report.baseline.aspect),
    ];
    for (name, c, b) in rows {
        out.push_str(&format!(
            "{:<10} {:>12.4} {:>12.4} {:>12.4} {:>12.4}\n",
            name, c.mae, c.rmse, b.mae, b.rmse
        ));
    }
    out
}
