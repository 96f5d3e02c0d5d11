//! Subcommand implementations: synthesis, training, tiled inference with
//! per-patch scene routing, mosaicking, hydrology, and evaluation.

use anyhow::{anyhow, bail, Context, Result};
use p2d_core::autodiff::Tensor;
use p2d_core::eval::{self, AspectDiff, StreamConfig};
use p2d_core::hydro;
use p2d_core::model::{
    decode_weights, encode_weights, ClassifierConfig, ModelConfig, PromptNet, SceneClassifier,
    WeightStore,
};
use p2d_core::mosaic::BlendAccumulator;
use p2d_core::raster::{self, RasterGrid};
use p2d_core::rng;
use p2d_core::terrain::{self, SceneClass};
use p2d_core::train::{self, PromptKind};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{parse_task, PipelineConfig};
use crate::io::{read_raster, write_gray_png, write_raster};
use crate::manifest::{
    self, CoverageReport, Extent, HydroMetricsEntry, HydroReport, PatchEntry, PlacementsManifest,
    SegmentationJson, SynthEntry, SynthManifest, TrainManifest, SCHEMA_VERSION,
};
use crate::registry::{model_key, Registry, CLASSIFIER_KEY};

pub fn read_weight_store(path: &Path) -> Result<WeightStore> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading weights {}", path.display()))?;
    decode_weights(&bytes).map_err(|e| anyhow!("decoding weights {}: {e}", path.display()))
}

pub fn write_weight_store(store: &WeightStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, encode_weights(store))
        .with_context(|| format!("writing weights {}", path.display()))
}

/// Worker thread count: 1 under --deterministic, else P2D_THREADS (default 1).
pub fn thread_count(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    std::env::var("P2D_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .map(|n| n.max(1))
        .unwrap_or(1)
}

// ---------------------------------------------------------------------------
// synth

pub fn cmd_synth(
    cfg: &PipelineConfig,
    out_dir: &Path,
    count_per_class: usize,
) -> Result<SynthManifest> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let params = cfg.terrain.to_core();
    let mut entries = Vec::new();
    let mut id = 0usize;
    for &class in &SceneClass::ALL {
        for _ in 0..count_per_class {
            let mut r = rng::seeded(cfg.seed, 10_000 + id as u64);
            let sample = terrain::generate_scene(&mut r, class, &params);
            let rgb = terrain::render_pseudo_rgb(&mut r, &sample);
            let dir_name = format!("{}_{:03}", class.name(), id);
            let dir = out_dir.join(&dir_name);
            std::fs::create_dir_all(&dir)?;
            write_raster(&sample.dtm, &dir.join("dtm.r32g"))?;
            write_raster(&sample.dsm, &dir.join("dsm.r32g"))?;
            let n = params.size * params.size;
            for (ch, name) in ["red", "green", "blue"].iter().enumerate() {
                let grid = sample.dsm.like(rgb[ch * n..(ch + 1) * n].to_vec());
                write_raster(&grid, &dir.join(format!("{name}.r32g")))?;
            }
            entries.push(SynthEntry {
                id,
                class: class.name().into(),
                dir: dir_name,
            });
            id += 1;
        }
    }
    let manifest = SynthManifest {
        schema: SCHEMA_VERSION,
        seed: cfg.seed,
        count_per_class,
        entries,
    };
    manifest::write_json(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train

pub fn cmd_train(
    cfg: &PipelineConfig,
    registry_path: &Path,
    task_name: &str,
    class_name: Option<&str>,
    out_path: &Path,
) -> Result<TrainManifest> {
    let mut registry = Registry::load_or_empty(registry_path)?;
    let manifest = if task_name == "classifier" {
        let (store, losses) = train::train_classifier(&cfg.classifier_train_config())
            .map_err(|e| anyhow!("{e}"))?;
        write_weight_store(&store, out_path)?;
        registry.insert(CLASSIFIER_KEY.into(), out_path);
        TrainManifest {
            schema: SCHEMA_VERSION,
            task: "classifier".into(),
            class: None,
            weights: out_path.display().to_string(),
            config_echo: store.config_echo.clone(),
            seed: cfg.seed,
            train_losses: losses,
            val_losses: vec![],
        }
    } else {
        let kind = parse_task(task_name)?;
        let class_name =
            class_name.ok_or_else(|| anyhow!("task '{task_name}' requires --class"))?;
        let class = SceneClass::from_name(class_name)
            .ok_or_else(|| anyhow!("unknown scene class '{class_name}'"))?;
        let fine_tune = kind != PromptKind::LowRes;
        let init = if fine_tune {
            let lowres_key = model_key(PromptKind::LowRes, class);
            let path = registry.lookup(&lowres_key).with_context(|| {
                format!("task '{task_name}' fine-tunes from a trained '{lowres_key}' checkpoint")
            })?;
            Some(read_weight_store(&path)?)
        } else {
            None
        };
        let out = train::train(
            class,
            &cfg.prompt_spec(kind),
            &cfg.train_config(fine_tune),
            init.as_ref(),
        )
        .map_err(|e| anyhow!("{e}"))?;
        write_weight_store(&out.store, out_path)?;
        registry.insert(model_key(kind, class), out_path);
        TrainManifest {
            schema: SCHEMA_VERSION,
            task: task_name.into(),
            class: Some(class.name().into()),
            weights: out_path.display().to_string(),
            config_echo: out.store.config_echo.clone(),
            seed: cfg.seed,
            train_losses: out.train_losses,
            val_losses: out.val_losses,
        }
    };
    registry.save()?;
    let manifest_path = out_path.with_extension("manifest.json");
    manifest::write_json(&manifest, &manifest_path)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// infer

fn rgb_tensor(tiles: [&RasterGrid; 3]) -> Tensor<f32> {
    let t = tiles[0].rows;
    let mut data = Vec::with_capacity(3 * t * t);
    for g in tiles {
        data.extend_from_slice(&g.values);
    }
    Tensor::from_vec(&[3, t, t], data)
}

struct Worker {
    classifier: Option<SceneClassifier<f32>>,
    models: BTreeMap<usize, (String, PromptNet<f32>)>,
    force_class: Option<SceneClass>,
    task: PromptKind,
}

impl Worker {
    fn build(
        classifier_store: Option<&WeightStore>,
        model_stores: &BTreeMap<usize, (String, WeightStore)>,
        force_class: Option<SceneClass>,
        task: PromptKind,
        tile_size: usize,
    ) -> Result<Worker> {
        let mut dummy = rng::seeded(0, 0);
        let classifier = match classifier_store {
            Some(store) => {
                let cfg = ClassifierConfig::from_echo(&store.config_echo)
                    .ok_or_else(|| anyhow!("weight file is not a classifier"))?;
                if cfg.input_size != tile_size {
                    bail!(
                        "classifier expects {}px tiles, plan uses {}px",
                        cfg.input_size,
                        tile_size
                    );
                }
                let clf = SceneClassifier::<f32>::new(&mut dummy, cfg);
                clf.load_store(store).map_err(|e| anyhow!("{e}"))?;
                Some(clf)
            }
            None => None,
        };
        let mut models = BTreeMap::new();
        for (&idx, (key, store)) in model_stores {
            let cfg = ModelConfig::from_echo(&store.config_echo)
                .ok_or_else(|| anyhow!("weight file '{key}' is not an elevation model"))?;
            if cfg.input_size != tile_size {
                bail!(
                    "model '{key}' expects {}px tiles, plan uses {}px",
                    cfg.input_size,
                    tile_size
                );
            }
            let net = PromptNet::<f32>::new(&mut dummy, cfg).map_err(|e| anyhow!("{e}"))?;
            net.load_store(store).map_err(|e| anyhow!("{e}"))?;
            models.insert(idx, (key.clone(), net));
        }
        Ok(Worker {
            classifier,
            models,
            force_class,
            task,
        })
    }

    fn predict(
        &self,
        index: usize,
        placement: (usize, usize),
        rgb_tiles: [&RasterGrid; 3],
        prompt_tile: &RasterGrid,
    ) -> Result<(PatchEntry, RasterGrid)> {
        let rgb = rgb_tensor(rgb_tiles);
        let (class, probs) = match self.force_class {
            Some(c) => (c, [0.0; 3]),
            None => self
                .classifier
                .as_ref()
                .expect("classifier present unless forced")
                .classify(&rgb)
                .map_err(|e| anyhow!("{e}"))?,
        };
        let (key, net) = self.models.get(&class.index()).ok_or_else(|| {
            let available: Vec<&str> = self.models.values().map(|(k, _)| k.as_str()).collect();
            anyhow!(
                "no weights registered for '{}'; available keys: [{}]",
                model_key(self.task, class),
                available.join(", ")
            )
        })?;
        let (norm_prompt, _, record) =
            p2d_core::model::normalize_io(prompt_tile, None).map_err(|e| anyhow!("{e}"))?;
        let prompt_t = Tensor::from_vec(
            &[1, norm_prompt.rows, norm_prompt.cols],
            norm_prompt.values.clone(),
        );
        let pred = net.forward(&rgb, Some(&prompt_t)).map_err(|e| anyhow!("{e}"))?;
        let values: Vec<f32> = pred
            .value()
            .iter()
            .map(|&v| record.denormalize(v as f64) as f32)
            .collect();
        let grid = rgb_tiles[0].like(values);
        let entry = PatchEntry {
            index,
            row0: placement.0,
            col0: placement.1,
            class: class.name().into(),
            weights_key: key.clone(),
            file: format!("patch_{index:04}.r32g"),
            norm_mean: record.mean,
            norm_scale: record.scale,
            probabilities: probs,
        };
        Ok((entry, grid))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    cfg: &PipelineConfig,
    registry_path: &Path,
    rgb_paths: &[PathBuf],
    prompt_path: &Path,
    task_name: &str,
    force_class: Option<&str>,
    out_dir: &Path,
) -> Result<PlacementsManifest> {
    let task = parse_task(task_name)?;
    if rgb_paths.len() != 3 {
        bail!("--rgb needs exactly 3 rasters (red,green,blue), got {}", rgb_paths.len());
    }
    let channels: Vec<RasterGrid> = rgb_paths
        .iter()
        .map(|p| read_raster(p))
        .collect::<Result<_>>()?;
    let (rows, cols) = (channels[0].rows, channels[0].cols);
    for ch in &channels[1..] {
        if ch.rows != rows || ch.cols != cols {
            bail!("rgb channel rasters disagree on dimensions");
        }
    }
    let prompt = read_raster(prompt_path)?;
    // co-register the prompt with the image grid so tile windows line up
    let prompt_hr = if prompt.rows == rows && prompt.cols == cols {
        prompt
    } else {
        raster::bilinear_resample(&prompt, rows, cols).map_err(|e| anyhow!("{e}"))?
    };
    let plan = raster::make_tile_plan(&channels[0], cfg.tile_size, cfg.overlap)
        .map_err(|e| anyhow!("{e}"))?;

    let force = match force_class {
        Some(name) => Some(
            SceneClass::from_name(name)
                .ok_or_else(|| anyhow!("unknown scene class '{name}'"))?,
        ),
        None => None,
    };
    let registry = Registry::load_or_empty(registry_path)?;
    let classifier_store = match force {
        Some(_) => None,
        None => Some(read_weight_store(&registry.lookup(CLASSIFIER_KEY).context(
            "per-patch routing needs a trained classifier (or pass --force-class)",
        )?)?),
    };
    // preload every model this run might route to; a missing forced class is
    // an immediate error, other classes may legitimately be absent until a
    // patch actually routes to them
    let mut model_stores: BTreeMap<usize, (String, WeightStore)> = BTreeMap::new();
    for &class in &SceneClass::ALL {
        if force.is_some() && force != Some(class) {
            continue;
        }
        let key = model_key(task, class);
        match registry.lookup(&key) {
            Ok(path) => {
                model_stores.insert(class.index(), (key, read_weight_store(&path)?));
            }
            Err(e) => {
                if force == Some(class) {
                    return Err(e);
                }
            }
        }
    }
    if model_stores.is_empty() {
        let available: Vec<&str> = registry.entries.keys().map(|k| k.as_str()).collect();
        bail!(
            "no weights registered for task '{task_name}'; available keys: [{}]",
            available.join(", ")
        );
    }

    std::fs::create_dir_all(out_dir)?;
    let tile = cfg.tile_size;
    let jobs: Vec<(usize, (usize, usize))> =
        plan.placements.iter().copied().enumerate().collect();
    let workers = thread_count(cfg.deterministic).min(jobs.len().max(1));
    let mut results: Vec<Option<(PatchEntry, RasterGrid)>> = Vec::new();
    results.resize_with(jobs.len(), || None);
    if workers <= 1 {
        let worker = Worker::build(classifier_store.as_ref(), &model_stores, force, task, tile)?;
        for &(i, placement) in &jobs {
            let tiles: Vec<RasterGrid> = channels
                .iter()
                .map(|c| raster::extract_tile(c, placement, tile))
                .collect::<Result<_, _>>()
                .map_err(|e| anyhow!("{e}"))?;
            let p_tile = raster::extract_tile(&prompt_hr, placement, tile)
                .map_err(|e| anyhow!("{e}"))?;
            results[i] =
                Some(worker.predict(i, placement, [&tiles[0], &tiles[1], &tiles[2]], &p_tile)?);
        }
    } else {
        // tiles are independent; each thread loads its own model instances
        // and writes to a disjoint slice, so output ordering is unaffected
        let chunk = jobs.len().div_ceil(workers);
        let mut slots: Vec<&mut [Option<(PatchEntry, RasterGrid)>]> = Vec::new();
        let mut rest = results.as_mut_slice();
        for _ in 0..workers {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            slots.push(head);
            rest = tail;
        }
        let errors: Vec<Result<()>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, slot) in slots.into_iter().enumerate() {
                let jobs = &jobs;
                let channels = &channels;
                let prompt_hr = &prompt_hr;
                let classifier_store = classifier_store.as_ref();
                let model_stores = &model_stores;
                handles.push(scope.spawn(move || -> Result<()> {
                    let worker =
                        Worker::build(classifier_store, model_stores, force, task, tile)?;
                    for (off, out) in slot.iter_mut().enumerate() {
                        let (i, placement) = jobs[w * chunk + off];
                        let tiles: Vec<RasterGrid> = channels
                            .iter()
                            .map(|c| raster::extract_tile(c, placement, tile))
                            .collect::<Result<_, _>>()
                            .map_err(|e| anyhow!("{e}"))?;
                        let p_tile = raster::extract_tile(prompt_hr, placement, tile)
                            .map_err(|e| anyhow!("{e}"))?;
                        *out = Some(worker.predict(
                            i,
                            placement,
                            [&tiles[0], &tiles[1], &tiles[2]],
                            &p_tile,
                        )?);
                    }
                    Ok(())
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for e in errors {
            e?;
        }
    }

    let mut patches = Vec::with_capacity(results.len());
    for slot in results {
        let (entry, grid) = slot.expect("all tiles predicted");
        write_raster(&grid, &out_dir.join(&entry.file))?;
        patches.push(entry);
    }
    let manifest = PlacementsManifest {
        schema: SCHEMA_VERSION,
        task: task_name.into(),
        tile_size: tile,
        overlap: cfg.overlap,
        extent: Extent::of(&channels[0]),
        patches,
    };
    manifest::write_json(&manifest, &out_dir.join("placements.json"))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// mosaic

pub fn cmd_mosaic(
    patch_dir: &Path,
    out_dem: &Path,
    hillshade_png: Option<&Path>,
) -> Result<CoverageReport> {
    let manifest: PlacementsManifest =
        manifest::read_json(&patch_dir.join("placements.json"))?;
    if manifest.patches.is_empty() {
        bail!("patch directory {} holds no patches", patch_dir.display());
    }
    let extent = manifest.extent.empty_grid();
    let mut acc = BlendAccumulator::new(&extent);
    for patch in &manifest.patches {
        let grid = read_raster(&patch_dir.join(&patch.file))?;
        acc.accumulate_patch(&grid, patch.row0, patch.col0)
            .map_err(|e| anyhow!("{e}"))?;
    }
    let dem = acc.finalize();
    write_raster(&dem, out_dem)?;
    if let Some(png) = hillshade_png {
        let shade = terrain::hillshade(&dem, 315.0, 45.0);
        write_gray_png(&shade, dem.rows, dem.cols, png)?;
    }
    let zero_weight_cells = dem.values.iter().filter(|&&v| v == dem.nodata).count();
    let report = CoverageReport {
        schema: SCHEMA_VERSION,
        rows: dem.rows,
        cols: dem.cols,
        zero_weight_cells,
    };
    manifest::write_json(&report, &out_dem.with_extension("coverage.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// hydro

pub struct HydroProducts {
    pub filled: RasterGrid,
    pub streams: hydro::StreamMask,
    pub threshold: usize,
}

pub fn stream_products(dem: &RasterGrid, threshold_frac: f64) -> Result<HydroProducts> {
    let filled = hydro::fill_depressions(dem).map_err(|e| anyhow!("{}", String::from(e)))?;
    let dirs = hydro::d8_flow_direction(&filled);
    let acc = hydro::flow_accumulation(&dirs).map_err(|e| anyhow!("{}", String::from(e)))?;
    let total = dem.rows * dem.cols;
    let threshold = ((total as f64 * threshold_frac).ceil() as usize).max(1);
    let streams = hydro::extract_streams(&acc, threshold);
    Ok(HydroProducts {
        filled,
        streams,
        threshold,
    })
}

fn mask_grid(template: &RasterGrid, mask: &[bool]) -> RasterGrid {
    template.like(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
}

pub fn cmd_hydro(
    dem_path: &Path,
    out_dir: &Path,
    threshold_frac: f64,
    radii_cells: &[f64],
    truth_path: Option<&Path>,
) -> Result<Option<HydroReport>> {
    let dem = read_raster(dem_path)?;
    let products = stream_products(&dem, threshold_frac)?;
    std::fs::create_dir_all(out_dir)?;
    write_raster(&products.filled, &out_dir.join("filled.r32g"))?;
    write_raster(
        &mask_grid(&dem, &products.streams.mask),
        &out_dir.join("streams.r32g"),
    )?;
    let report = match truth_path {
        None => None,
        Some(tp) => {
            let truth = read_raster(tp)?;
            if truth.rows != dem.rows || truth.cols != dem.cols {
                bail!("truth DEM dimensions disagree with the candidate");
            }
            let truth_products = stream_products(&truth, threshold_frac)?;
            let mut entries = Vec::new();
            for &radius in radii_cells {
                let meters = radius * dem.cell_size;
                let pb = hydro::buffer_mask(&products.streams, meters, dem.cell_size);
                let tb = hydro::buffer_mask(&truth_products.streams, meters, dem.cell_size);
                let m = hydro::segmentation_metrics(&pb, &tb)
                    .map_err(|e| anyhow!("{}", String::from(e)))?;
                entries.push(HydroMetricsEntry {
                    radius_cells: radius,
                    metrics: SegmentationJson::from(&m),
                });
            }
            let report = HydroReport {
                schema: SCHEMA_VERSION,
                threshold_cells: products.threshold,
                entries,
            };
            manifest::write_json(&report, &out_dir.join("metrics.json"))?;
            Some(report)
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// eval

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    truth_path: &Path,
    candidate_path: &Path,
    baseline_path: &Path,
    region_path: Option<&Path>,
    stream_config: Option<StreamConfig>,
    out_path: &Path,
) -> Result<manifest::EvalReportJson> {
    let truth = read_raster(truth_path)?;
    let candidate = read_raster(candidate_path)?;
    let baseline = read_raster(baseline_path)?;
    let region: Option<Vec<bool>> = match region_path {
        Some(p) => {
            let mask = read_raster(p)?;
            if mask.rows != truth.rows || mask.cols != truth.cols {
                bail!("region mask dimensions disagree with the truth DEM");
            }
            Some(mask.values.iter().map(|&v| v > 0.5).collect())
        }
        None => None,
    };
    let report = eval::compare_report(
        &truth,
        &candidate,
        &baseline,
        region.as_deref(),
        stream_config.as_ref(),
    )
    .map_err(|e| anyhow!("{e:?}"))?;
    let json = manifest::EvalReportJson::from(&report);
    manifest::write_json(&json, out_path)?;
    Ok(json)
}

/// Circular-aspect MAE helper exposed for report consumers.
pub fn aspect_mode() -> AspectDiff {
    AspectDiff::Circular
}

// ---------------------------------------------------------------------------
// classify

pub fn cmd_classify(
    cfg: &PipelineConfig,
    registry_path: &Path,
    rgb_paths: &[PathBuf],
    out_path: Option<&Path>,
) -> Result<Vec<PatchEntry>> {
    if rgb_paths.len() != 3 {
        bail!("--rgb needs exactly 3 rasters (red,green,blue), got {}", rgb_paths.len());
    }
    let channels: Vec<RasterGrid> = rgb_paths
        .iter()
        .map(|p| read_raster(p))
        .collect::<Result<_>>()?;
    let registry = Registry::load_or_empty(registry_path)?;
    let store = read_weight_store(&registry.lookup(CLASSIFIER_KEY)?)?;
    let clf_cfg = ClassifierConfig::from_echo(&store.config_echo)
        .ok_or_else(|| anyhow!("weight file is not a classifier"))?;
    let tile = clf_cfg.input_size;
    let mut dummy = rng::seeded(0, 0);
    let clf = SceneClassifier::<f32>::new(&mut dummy, clf_cfg);
    clf.load_store(&store).map_err(|e| anyhow!("{e}"))?;
    let plan = raster::make_tile_plan(&channels[0], tile, cfg.overlap.min(tile - 1))
        .map_err(|e| anyhow!("{e}"))?;
    let mut entries = Vec::new();
    for (i, &placement) in plan.placements.iter().enumerate() {
        let tiles: Vec<RasterGrid> = channels
            .iter()
            .map(|c| raster::extract_tile(c, placement, tile))
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow!("{e}"))?;
        let rgb = rgb_tensor([&tiles[0], &tiles[1], &tiles[2]]);
        let (class, probs) = clf.classify(&rgb).map_err(|e| anyhow!("{e}"))?;
        entries.push(PatchEntry {
            index: i,
            row0: placement.0,
            col0: placement.1,
            class: class.name().into(),
            weights_key: CLASSIFIER_KEY.into(),
            file: String::new(),
            norm_mean: 0.0,
            norm_scale: 0.0,
            probabilities: probs,
        });
    }
    if let Some(out) = out_path {
        manifest::write_json(&entries, out)?;
    }
    Ok(entries)
}
