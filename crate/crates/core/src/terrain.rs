//! Synthetic scene generation: fractal bare-earth terrain plus optional
//! buildings (urban) or tree canopy (vegetated), rendered to a pseudo-image
//! and degraded into coarse elevation prompts for training.
//!
//! Every generator takes the caller's RNG, so a seed fully determines a
//! scene across platforms.

use alloc::vec;
use alloc::vec::Vec;

use crate::eval;
use crate::raster::RasterGrid;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneClass {
    Urban,
    Vegetated,
    Bare,
}

impl SceneClass {
    pub const ALL: [SceneClass; 3] = [SceneClass::Urban, SceneClass::Vegetated, SceneClass::Bare];

    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Urban => "urban",
            SceneClass::Vegetated => "vegetated",
            SceneClass::Bare => "bare",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SceneClass::Urban => 0,
            SceneClass::Vegetated => 1,
            SceneClass::Bare => 2,
        }
    }

    pub fn from_name(name: &str) -> Option<SceneClass> {
        match name {
            "urban" => Some(SceneClass::Urban),
            "vegetated" => Some(SceneClass::Vegetated),
            "bare" => Some(SceneClass::Bare),
            _ => None,
        }
    }
}

/// One synthetic scene: bare-earth truth, surface model, and the masks of
/// the above-ground features that separate the two.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub class: SceneClass,
    /// Bare-earth elevation (the prediction target).
    pub dtm: RasterGrid,
    /// Surface elevation: dtm plus buildings/canopy.
    pub dsm: RasterGrid,
    pub building_mask: Vec<bool>,
    pub canopy_mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct TerrainParams {
    pub size: usize,
    pub cell_size: f64,
    /// Peak-to-peak relief of the fractal ground surface, meters.
    pub relief: f64,
    pub octaves: usize,
}

impl Default for TerrainParams {
    fn default() -> Self {
        TerrainParams {
            size: 64,
            cell_size: 1.0,
            relief: 40.0,
            octaves: 4,
        }
    }
}

/// Bilinear value noise on a `freq`x`freq` lattice, sampled over a
/// `size`x`size` grid, values in [-1, 1].
fn value_noise(r: &mut Rng, size: usize, freq: usize) -> Vec<f64> {
    let lat = freq + 1;
    let lattice: Vec<f64> = (0..lat * lat)
        .map(|_| rng::uniform_range(r, -1.0, 1.0))
        .collect();
    let mut out = vec![0.0; size * size];
    let scale = freq as f64 / (size.max(2) - 1) as f64;
    for i in 0..size {
        for j in 0..size {
            let y = i as f64 * scale;
            let x = j as f64 * scale;
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y0, x0) = (y0.min(freq - 1), x0.min(freq - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            // smoothstep fade for C1 continuity across lattice cells
            let (fy, fx) = (fy * fy * (3.0 - 2.0 * fy), fx * fx * (3.0 - 2.0 * fx));
            let v00 = lattice[y0 * lat + x0];
            let v01 = lattice[y0 * lat + x0 + 1];
            let v10 = lattice[(y0 + 1) * lat + x0];
            let v11 = lattice[(y0 + 1) * lat + x0 + 1];
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out[i * size + j] = top + (bot - top) * fy;
        }
    }
    out
}

/// Fractal (fBm) ground surface: octaves of value noise with halving
/// amplitude and doubling frequency, rescaled to the requested relief.
pub fn generate_ground(r: &mut Rng, params: &TerrainParams) -> RasterGrid {
    let size = params.size;
    let mut field = vec![0.0f64; size * size];
    let mut amp = 1.0;
    let mut freq = 4usize;
    for _ in 0..params.octaves.max(1) {
        let layer = value_noise(r, size, freq.min(size.max(4)));
        for (f, l) in field.iter_mut().zip(&layer) {
            *f += amp * l;
        }
        amp *= 0.5;
        freq *= 2;
    }
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let base = rng::uniform_range(r, 100.0, 300.0);
    let values: Vec<f32> = field
        .iter()
        .map(|&v| (base + (v - lo) / span * params.relief) as f32)
        .collect();
    RasterGrid::new(
        size,
        size,
        params.cell_size,
        0.0,
        0.0,
        crate::raster::NODATA,
        values,
    )
    .expect("valid synthetic grid")
}

fn add_buildings(r: &mut Rng, dtm: &RasterGrid, dsm: &mut Vec<f32>, mask: &mut [bool]) {
    let size = dtm.rows;
    let n = 4 + rng::uniform_usize(r, 5); // 4..=8 buildings
    for _ in 0..n {
        let w = 4 + rng::uniform_usize(r, 9);
        let h = 4 + rng::uniform_usize(r, 9);
        let w = w.min(size);
        let h = h.min(size);
        let r0 = rng::uniform_usize(r, size - h + 1);
        let c0 = rng::uniform_usize(r, size - w + 1);
        let height = rng::uniform_range(r, 5.0, 20.0) as f32;
        // flat roof: constant absolute elevation over the footprint
        let mut base = f32::NEG_INFINITY;
        for rr in r0..r0 + h {
            for cc in c0..c0 + w {
                base = base.max(dtm.at(rr, cc));
            }
        }
        for rr in r0..r0 + h {
            for cc in c0..c0 + w {
                let idx = rr * size + cc;
                dsm[idx] = dsm[idx].max(base + height);
                mask[idx] = true;
            }
        }
    }
}

fn add_canopy(r: &mut Rng, dsm: &mut Vec<f32>, mask: &mut [bool], size: usize) {
    let n = 6 + rng::uniform_usize(r, 7); // 6..=12 blobs
    for _ in 0..n {
        let cr = rng::uniform_usize(r, size) as f64;
        let cc = rng::uniform_usize(r, size) as f64;
        let radius = rng::uniform_range(r, 3.0, 8.0);
        let height = rng::uniform_range(r, 5.0, 25.0);
        let reach = radius.ceil() as isize;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let rr = cr as isize + dr;
                let cc2 = cc as isize + dc;
                if rr < 0 || cc2 < 0 || rr as usize >= size || cc2 as usize >= size {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64 / (radius * radius);
                if d2 >= 1.0 {
                    continue;
                }
                // smooth dome
                let bump = height * (1.0 - d2) * (1.0 - d2);
                let idx = rr as usize * size + cc2 as usize;
                dsm[idx] += bump as f32;
                if bump > 1.0 {
                    mask[idx] = true;
                }
            }
        }
    }
}

/// Generate a full scene of the requested class.
pub fn generate_scene(r: &mut Rng, class: SceneClass, params: &TerrainParams) -> SceneSample {
    let dtm = generate_ground(r, params);
    let size = params.size;
    let mut dsm_values = dtm.values.clone();
    let mut building_mask = vec![false; size * size];
    let mut canopy_mask = vec![false; size * size];
    match class {
        SceneClass::Urban => add_buildings(r, &dtm, &mut dsm_values, &mut building_mask),
        SceneClass::Vegetated => add_canopy(r, &mut dsm_values, &mut canopy_mask, size),
        SceneClass::Bare => {}
    }
    let dsm = dtm.like(dsm_values);
    SceneSample {
        class,
        dtm,
        dsm,
        building_mask,
        canopy_mask,
    }
}

/// Hillshade in [0, 1] with sun azimuth/altitude in degrees. Azimuth is
/// clockwise from north.
pub fn hillshade(dem: &RasterGrid, azimuth_deg: f64, altitude_deg: f64) -> Vec<f32> {
    let az = azimuth_deg.to_radians();
    let alt = altitude_deg.to_radians();
    // sun direction in (east, north, up)
    let sun = (alt.cos() * az.sin(), alt.cos() * az.cos(), alt.sin());
    let mut out = vec![0.5f32; dem.rows * dem.cols];
    for r in 0..dem.rows {
        for c in 0..dem.cols {
            if let Some((gx, gy)) = eval::gradient_at(dem, r, c) {
                // surface normal of z(x, y): (-gx, -gy, 1) normalized
                let norm = (gx * gx + gy * gy + 1.0).sqrt();
                let dot = (-gx * sun.0 - gy * sun.1 + sun.2) / norm;
                out[r * dem.cols + c] = dot.max(0.0).min(1.0) as f32;
            }
        }
    }
    out
}

/// Render the scene into 3 input channels, each in [0, 1], layout [3, S, S]:
/// hillshaded surface, normalized slope, and a land-cover texture channel
/// (bright blocks over buildings, speckle over canopy).
pub fn render_pseudo_rgb(r: &mut Rng, sample: &SceneSample) -> Vec<f32> {
    let size = sample.dsm.rows;
    let n = size * size;
    let mut out = Vec::with_capacity(3 * n);
    out.extend(hillshade(&sample.dsm, 315.0, 45.0));
    let slope = eval::slope_map(&sample.dsm);
    out.extend(slope.values.iter().map(|&s| (s / 90.0).clamp(0.0, 1.0)));
    for i in 0..n {
        let v = if sample.building_mask[i] {
            0.85 + rng::uniform(r) as f32 * 0.15
        } else if sample.canopy_mask[i] {
            0.3 + rng::uniform(r) as f32 * 0.4
        } else {
            0.05 + rng::uniform(r) as f32 * 0.1
        };
        out.push(v);
    }
    out
}

/// Degrade the scene's surface into a coarse elevation prompt:
/// block-average the dsm at `factor`, then add Gaussian sensor noise and an
/// upward canopy bias proportional to canopy coverage (mimicking
/// radar-derived global products that see the top of vegetation).
pub fn degrade_to_prompt(
    r: &mut Rng,
    sample: &SceneSample,
    factor: usize,
    noise_sigma: f64,
    canopy_bias: f64,
) -> RasterGrid {
    let coarse = crate::raster::average_downsample(&sample.dsm, factor)
        .expect("scene size divisible by prompt factor");
    let size = sample.dsm.rows;
    let mut values = coarse.values.clone();
    for br in 0..coarse.rows {
        for bc in 0..coarse.cols {
            let mut cover = 0usize;
            for rr in br * factor..(br + 1) * factor {
                for cc in bc * factor..(bc + 1) * factor {
                    if sample.canopy_mask[rr * size + cc] {
                        cover += 1;
                    }
                }
            }
            let frac = cover as f64 / (factor * factor) as f64;
            let idx = br * coarse.cols + bc;
            values[idx] += (rng::normal(r) * noise_sigma + canopy_bias * frac) as f32;
        }
    }
    coarse.like(values)
}

/// Simulate a void-filled product: replace a centered square of side
/// `hole_fraction * min(rows, cols)` in `hr` with a bilinear upsampling of
/// `lr_prompt`, mimicking a high-res DEM whose hole was patched from a
/// coarse source. Returns the patched grid and the hole mask.
pub fn carve_void(
    hr: &RasterGrid,
    lr_prompt: &RasterGrid,
    hole_fraction: f64,
) -> (RasterGrid, Vec<bool>) {
    let (rows, cols) = (hr.rows, hr.cols);
    let side = ((rows.min(cols) as f64) * hole_fraction.clamp(0.0, 1.0)) as usize;
    let up = crate::raster::bilinear_resample(lr_prompt, rows, cols)
        .expect("lr prompt upsamples to hr extent");
    let r0 = (rows - side) / 2;
    let c0 = (cols - side) / 2;
    let mut values = hr.values.clone();
    let mut mask = vec![false; rows * cols];
    for rr in r0..r0 + side {
        for cc in c0..c0 + side {
            let idx = rr * cols + cc;
            values[idx] = up.values[idx];
            mask[idx] = true;
        }
    }
    (hr.like(values), mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TerrainParams {
        TerrainParams::default()
    }

    #[test]
    fn generation_is_deterministic() {
        let mut r1 = rng::seeded(9, 0);
        let mut r2 = rng::seeded(9, 0);
        let a = generate_scene(&mut r1, SceneClass::Urban, &params());
        let b = generate_scene(&mut r2, SceneClass::Urban, &params());
        assert_eq!(a.dtm.values, b.dtm.values);
        assert_eq!(a.dsm.values, b.dsm.values);
        assert_eq!(a.building_mask, b.building_mask);
    }

    #[test]
    fn different_seeds_differ() {
        let mut r1 = rng::seeded(9, 0);
        let mut r2 = rng::seeded(10, 0);
        let a = generate_scene(&mut r1, SceneClass::Bare, &params());
        let b = generate_scene(&mut r2, SceneClass::Bare, &params());
        assert_ne!(a.dtm.values, b.dtm.values);
    }

    #[test]
    fn ground_relief_matches_params() {
        let mut r = rng::seeded(3, 1);
        let g = generate_ground(&mut r, &params());
        let lo = g.values.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = g.values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!((hi - lo - 40.0).abs() < 1e-3);
        assert!(lo >= 100.0 && hi <= 340.0);
    }

    #[test]
    fn dsm_never_below_dtm() {
        for class in SceneClass::ALL {
            let mut r = rng::seeded(17, class.index() as u64);
            let s = generate_scene(&mut r, class, &params());
            for (d, t) in s.dsm.values.iter().zip(&s.dtm.values) {
                assert!(d >= t);
            }
        }
    }

    #[test]
    fn class_features_present_and_exclusive() {
        let mut r = rng::seeded(5, 2);
        let u = generate_scene(&mut r, SceneClass::Urban, &params());
        assert!(u.building_mask.iter().any(|&m| m));
        assert!(u.canopy_mask.iter().all(|&m| !m));
        let v = generate_scene(&mut r, SceneClass::Vegetated, &params());
        assert!(v.canopy_mask.iter().any(|&m| m));
        assert!(v.building_mask.iter().all(|&m| !m));
        let b = generate_scene(&mut r, SceneClass::Bare, &params());
        assert_eq!(b.dsm.values, b.dtm.values);
    }

    #[test]
    fn buildings_raise_surface_under_mask() {
        let mut r = rng::seeded(21, 3);
        let s = generate_scene(&mut r, SceneClass::Urban, &params());
        for (i, &m) in s.building_mask.iter().enumerate() {
            if m {
                assert!(s.dsm.values[i] - s.dtm.values[i] >= 4.9);
            } else {
                assert_eq!(s.dsm.values[i], s.dtm.values[i]);
            }
        }
    }

    #[test]
    fn hillshade_range_and_orientation() {
        // plane dipping NW faces the 315-degree sun: brighter than the
        // opposite SE-dipping plane
        let size = 8;
        let nw: Vec<f32> = (0..size * size)
            .map(|k| ((k / size) + (k % size)) as f32 * 0.5)
            .collect();
        let se: Vec<f32> = nw.iter().map(|v| -v).collect();
        let g_nw = RasterGrid::constant(size, size, 0.0).like(nw);
        let g_se = RasterGrid::constant(size, size, 0.0).like(se);
        let h_nw = hillshade(&g_nw, 315.0, 45.0);
        let h_se = hillshade(&g_se, 315.0, 45.0);
        for (a, b) in h_nw.iter().zip(&h_se) {
            assert!((0.0..=1.0).contains(a));
            assert!(a > b);
        }
    }

    #[test]
    fn pseudo_rgb_shape_and_range() {
        let mut r = rng::seeded(8, 4);
        let s = generate_scene(&mut r, SceneClass::Vegetated, &params());
        let img = render_pseudo_rgb(&mut r, &s);
        assert_eq!(img.len(), 3 * 64 * 64);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn texture_channel_separates_classes() {
        let mut r = rng::seeded(8, 5);
        let s = generate_scene(&mut r, SceneClass::Urban, &params());
        let img = render_pseudo_rgb(&mut r, &s);
        let tex = &img[2 * 64 * 64..];
        for (i, &m) in s.building_mask.iter().enumerate() {
            if m {
                assert!(tex[i] >= 0.85);
            } else {
                assert!(tex[i] <= 0.15);
            }
        }
    }

    #[test]
    fn prompt_is_coarse_block_mean_when_clean() {
        let mut r = rng::seeded(13, 6);
        let s = generate_scene(&mut r, SceneClass::Bare, &params());
        let p = degrade_to_prompt(&mut r, &s, 8, 0.0, 0.0);
        assert_eq!((p.rows, p.cols), (8, 8));
        assert_eq!(p.cell_size, 8.0);
        // noiseless, bias-free prompt is exactly the surface block mean
        let exact = crate::raster::average_downsample(&s.dsm, 8).unwrap();
        assert_eq!(p.values, exact.values);
    }

    #[test]
    fn canopy_bias_raises_prompt() {
        let mut r = rng::seeded(13, 7);
        let s = generate_scene(&mut r, SceneClass::Vegetated, &params());
        let mut r1 = rng::seeded(1, 0);
        let mut r2 = rng::seeded(1, 0);
        let unbiased = degrade_to_prompt(&mut r1, &s, 8, 0.0, 0.0);
        let biased = degrade_to_prompt(&mut r2, &s, 8, 0.0, 10.0);
        let mean = |g: &RasterGrid| g.values.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        assert!(mean(&biased) > mean(&unbiased));
        for (b, u) in biased.values.iter().zip(&unbiased.values) {
            assert!(b >= u);
        }
    }

    #[test]
    fn void_is_centered_square_patched_from_lr() {
        let mut r = rng::seeded(4, 8);
        let s = generate_scene(&mut r, SceneClass::Urban, &params());
        let lr = degrade_to_prompt(&mut r, &s, 8, 0.0, 0.0);
        let (patched, mask) = carve_void(&s.dsm, &lr, 0.5);
        // hole fraction 0.5 on 64x64: exactly the central 32x32
        for rr in 0..64 {
            for cc in 0..64 {
                let inside = (16..48).contains(&rr) && (16..48).contains(&cc);
                assert_eq!(mask[rr * 64 + cc], inside);
                if !inside {
                    assert_eq!(patched.at(rr, cc), s.dsm.at(rr, cc));
                }
            }
        }
        // in-hole values come from the upsampled low-res prompt
        let up = crate::raster::bilinear_resample(&lr, 64, 64).unwrap();
        assert_eq!(patched.at(30, 30), up.at(30, 30));
    }

    #[test]
    fn void_invisible_on_flat_sample() {
        let flat = RasterGrid::constant(64, 64, 250.0);
        let lr = crate::raster::average_downsample(&flat, 8).unwrap();
        let (patched, _) = carve_void(&flat, &lr, 0.5);
        assert_eq!(patched.values, flat.values);
    }
}
