//! Pipeline configuration: one JSON file drives synthesis, training,
//! inference, mosaicking, hydrology, and evaluation.

use anyhow::{bail, Context, Result};
use p2d_core::model::{ClassifierConfig, ModelConfig};
use p2d_core::terrain::TerrainParams;
use p2d_core::train::{ClassifierTrainConfig, PromptKind, PromptSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainCfg {
    pub size: usize,
    pub cell_size: f64,
    pub relief: f64,
    pub octaves: usize,
}

impl Default for TerrainCfg {
    fn default() -> Self {
        let p = TerrainParams::default();
        TerrainCfg {
            size: p.size,
            cell_size: p.cell_size,
            relief: p.relief,
            octaves: p.octaves,
        }
    }
}

impl TerrainCfg {
    pub fn to_core(&self) -> TerrainParams {
        TerrainParams {
            size: self.size,
            cell_size: self.cell_size,
            relief: self.relief,
            octaves: self.octaves,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelCfg {
    pub input_size: usize,
    pub vit_patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub tap_layers: [usize; 4],
    pub decoder_channels: [usize; 4],
    pub fusion_stages: [bool; 4],
}

impl Default for ModelCfg {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelCfg {
            input_size: m.input_size,
            vit_patch: m.vit_patch,
            embed_dim: m.embed_dim,
            depth: m.depth,
            heads: m.heads,
            tap_layers: m.tap_layers,
            decoder_channels: m.decoder_channels,
            fusion_stages: m.fusion_stages,
        }
    }
}

impl ModelCfg {
    pub fn to_core(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            vit_patch: self.vit_patch,
            embed_dim: self.embed_dim,
            depth: self.depth,
            heads: self.heads,
            tap_layers: self.tap_layers,
            decoder_channels: self.decoder_channels,
            fusion_stages: self.fusion_stages,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCfg {
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs when training from random init.
    pub epochs: usize,
    /// Epochs when fine-tuning from a checkpoint (void / update tasks).
    pub fine_tune_epochs: usize,
    pub lambda_edge: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Prompt downsample factor.
    pub factor: usize,
    pub hole_fraction: f64,
    pub bias_sigma: f64,
    pub canopy_bias: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = PromptSpec::new(PromptKind::LowRes);
        TrainCfg {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            fine_tune_epochs: 5,
            lambda_edge: t.lambda_edge,
            train_samples: t.train_samples,
            val_samples: t.val_samples,
            factor: s.factor,
            hole_fraction: s.hole_fraction,
            bias_sigma: s.bias_sigma,
            canopy_bias: s.canopy_bias,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierCfg {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_samples: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for ClassifierCfg {
    fn default() -> Self {
        let t = ClassifierTrainConfig::default();
        let c = ClassifierConfig::default();
        ClassifierCfg {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            train_samples: t.train_samples,
            patch: c.patch,
            embed_dim: c.embed_dim,
            depth: c.depth,
            heads: c.heads,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub tile_size: usize,
    pub overlap: usize,
    /// Stream threshold as a fraction of total cells.
    pub stream_threshold_frac: f64,
    /// Buffer radii in cells at desk scale. With the nominal 1 m cell size
    /// these stand in for the 5/10/25 m radii of a field-scale product.
    pub buffer_radii_cells: Vec<f64>,
    /// Weight registry path, resolved relative to this config file.
    pub registry: String,
    pub terrain: TerrainCfg,
    pub model: ModelCfg,
    pub train: TrainCfg,
    pub classifier: ClassifierCfg,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            deterministic: false,
            tile_size: 64,
            overlap: 16,
            stream_threshold_frac: 0.005,
            buffer_radii_cells: vec![1.0, 2.0, 5.0],
            registry: "registry.json".into(),
            terrain: TerrainCfg::default(),
            model: ModelCfg::default(),
            train: TrainCfg::default(),
            classifier: ClassifierCfg::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.overlap >= self.tile_size {
            bail!(
                "overlap {} must be smaller than tile_size {}",
                self.overlap,
                self.tile_size
            );
        }
        if self.tile_size != self.model.input_size {
            bail!(
                "tile_size {} must equal model input_size {}",
                self.tile_size,
                self.model.input_size
            );
        }
        self.model
            .to_core()
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if !(self.stream_threshold_frac > 0.0 && self.stream_threshold_frac < 1.0) {
            bail!("stream_threshold_frac must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn prompt_spec(&self, kind: PromptKind) -> PromptSpec {
        PromptSpec {
            kind,
            factor: self.train.factor,
            hole_fraction: self.train.hole_fraction,
            bias_sigma: self.train.bias_sigma,
            canopy_bias: self.train.canopy_bias,
        }
    }

    pub fn train_config(&self, fine_tune: bool) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: if fine_tune {
                self.train.fine_tune_epochs
            } else {
                self.train.epochs
            },
            lambda_edge: self.train.lambda_edge,
            seed: self.seed,
            train_samples: self.train.train_samples,
            val_samples: self.train.val_samples,
            model: self.model.to_core(),
            terrain: self.terrain.to_core(),
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            input_size: self.terrain.size,
            patch: self.classifier.patch,
            embed_dim: self.classifier.embed_dim,
            depth: self.classifier.depth,
            heads: self.classifier.heads,
        }
    }

    pub fn classifier_train_config(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            lr: self.classifier.lr,
            batch_size: self.classifier.batch_size,
            epochs: self.classifier.epochs,
            seed: self.seed,
            train_samples: self.classifier.train_samples,
            classifier: self.classifier_config(),
            terrain: self.terrain.to_core(),
        }
    }
}

/// Map a CLI task name to the core prompt regime. `update` is the
/// DEM-updating task driven by a bare-earth prompt.
pub fn parse_task(name: &str) -> Result<PromptKind> {
    match name {
        "lowres" => Ok(PromptKind::LowRes),
        "void" => Ok(PromptKind::VoidFilled),
        "update" => Ok(PromptKind::TerrainOnly),
        other => bail!("unknown task '{other}' (expected lowres, void, or update)"),
    }
}
