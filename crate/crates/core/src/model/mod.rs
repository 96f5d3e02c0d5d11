//! The miniature prompt-fusion elevation network and scene classifier.
//!
//! A small ViT encoder produces token grids at four depths; a DPT-style
//! decoder reassembles them coarse-to-fine into a dense elevation map. At
//! every decoder stage a coarse elevation prompt can be injected through a
//! shallow conv branch whose final 1x1 projection starts at exactly zero,
//! so an untrained model ignores the prompt bit-for-bit and training decides
//! how much of it to trust.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{ShapeError, Tensor};
use crate::math::Scalar;
use crate::raster::RasterGrid;
use crate::rng::Rng;

mod classifier;
mod vit;
mod weights;

pub use classifier::{ClassifierConfig, SceneClassifier};
pub use vit::VitEncoder;
pub use weights::{decode_weights, encode_weights, WeightError, WeightStore};

use vit::{randn_tensor, zeros_param};

/// Global elevation scale used by [`normalize_io`], meters.
pub const NORM_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub vit_patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// 1-based encoder block indices feeding the four decoder stages.
    pub tap_layers: [usize; 4],
    pub decoder_channels: [usize; 4],
    /// Which decoder stages receive prompt injection.
    pub fusion_stages: [bool; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            vit_patch: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            tap_layers: [1, 2, 3, 4],
            decoder_channels: [64, 64, 64, 64],
            fusion_stages: [true; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    BadConfig(String),
    Shape(ShapeError),
    AllNodataPrompt,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::BadConfig(msg) => write!(f, "bad model config: {msg}"),
            ModelError::Shape(e) => write!(f, "shape error: {e}"),
            ModelError::AllNodataPrompt => write!(f, "prompt has no valid cells"),
        }
    }
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Shape(e)
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.input_size == 0 || self.vit_patch == 0 || self.input_size % self.vit_patch != 0 {
            return bad(format!(
                "input_size {} not divisible by vit_patch {}",
                self.input_size, self.vit_patch
            ));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        let mut prev = 0;
        for &t in &self.tap_layers {
            if t == 0 || t > self.depth || t <= prev {
                return bad(format!(
                    "tap_layers {:?} must be strictly increasing in 1..={}",
                    self.tap_layers, self.depth
                ));
            }
            prev = t;
        }
        // coarse-to-fine accumulation adds stage features in place, which
        // requires one shared channel width
        if self.decoder_channels.iter().any(|&c| c == 0)
            || self.decoder_channels.iter().any(|&c| c != self.decoder_channels[0])
        {
            return bad(format!(
                "decoder_channels {:?} must be equal and nonzero",
                self.decoder_channels
            ));
        }
        Ok(())
    }

    /// Spatial size of decoder stage `s` (0-based): (S/p) * 2^s.
    pub fn stage_size(&self, s: usize) -> usize {
        (self.input_size / self.vit_patch) << s
    }

    /// Canonical key=value echo embedded in weight files.
    pub fn echo(&self) -> String {
        format!(
            "input_size={};vit_patch={};embed_dim={};depth={};heads={};taps={},{},{},{};channels={},{},{},{};fusion={},{},{},{}",
            self.input_size,
            self.vit_patch,
            self.embed_dim,
            self.depth,
            self.heads,
            self.tap_layers[0],
            self.tap_layers[1],
            self.tap_layers[2],
            self.tap_layers[3],
            self.decoder_channels[0],
            self.decoder_channels[1],
            self.decoder_channels[2],
            self.decoder_channels[3],
            self.fusion_stages[0],
            self.fusion_stages[1],
            self.fusion_stages[2],
            self.fusion_stages[3],
        )
    }

    pub fn from_echo(echo: &str) -> Option<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for field in echo.split(';') {
            let (key, val) = field.split_once('=')?;
            match key {
                "input_size" => cfg.input_size = val.parse().ok()?,
                "vit_patch" => cfg.vit_patch = val.parse().ok()?,
                "embed_dim" => cfg.embed_dim = val.parse().ok()?,
                "depth" => cfg.depth = val.parse().ok()?,
                "heads" => cfg.heads = val.parse().ok()?,
                "taps" => {
                    for (i, v) in val.split(',').enumerate() {
                        *cfg.tap_layers.get_mut(i)? = v.parse().ok()?;
                    }
                }
                "channels" => {
                    for (i, v) in val.split(',').enumerate() {
                        *cfg.decoder_channels.get_mut(i)? = v.parse().ok()?;
                    }
                }
                "fusion" => {
                    for (i, v) in val.split(',').enumerate() {
                        *cfg.fusion_stages.get_mut(i)? = v.parse().ok()?;
                    }
                }
                _ => return None,
            }
        }
        Some(cfg)
    }
}

/// Shallow prompt branch for one decoder stage: 3x3 conv (1 -> 16), GELU,
/// 3x3 conv (16 -> 16), then a zero-initialized 1x1 projection to the stage
/// channel count.
struct PromptFusion<S: Scalar> {
    c1_w: Tensor<S>,
    c1_b: Tensor<S>,
    c2_w: Tensor<S>,
    c2_b: Tensor<S>,
    proj_w: Tensor<S>,
    proj_b: Tensor<S>,
}

const FUSION_HIDDEN: usize = 16;

impl<S: Scalar> PromptFusion<S> {
    fn new(r: &mut Rng, channels: usize) -> Self {
        PromptFusion {
            c1_w: randn_tensor(r, &[FUSION_HIDDEN, 1, 3, 3], 0.05),
            c1_b: zeros_param(&[FUSION_HIDDEN]),
            c2_w: randn_tensor(r, &[FUSION_HIDDEN, FUSION_HIDDEN, 3, 3], 0.05),
            c2_b: zeros_param(&[FUSION_HIDDEN]),
            // both weights and bias exactly zero: untrained prompt branch
            // contributes nothing, bit-for-bit
            proj_w: zeros_param(&[channels, FUSION_HIDDEN, 1, 1]),
            proj_b: zeros_param(&[channels]),
        }
    }

    fn inject(&self, prompt: &Tensor<S>, size: usize) -> Result<Tensor<S>, ShapeError> {
        prompt
            .bilinear_resize(size, size)?
            .conv2d(&self.c1_w, Some(&self.c1_b), 1, 1)?
            .gelu()
            .conv2d(&self.c2_w, Some(&self.c2_b), 1, 1)?
            .conv2d(&self.proj_w, Some(&self.proj_b), 1, 0)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        for (name, t) in [
            ("c1_w", &self.c1_w),
            ("c1_b", &self.c1_b),
            ("c2_w", &self.c2_w),
            ("c2_b", &self.c2_b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
        ] {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
}

struct DecoderStage<S: Scalar> {
    reassemble_w: Tensor<S>,
    reassemble_b: Tensor<S>,
    fuse_w: Tensor<S>,
    fuse_b: Tensor<S>,
    prompt: Option<PromptFusion<S>>,
}

impl<S: Scalar> DecoderStage<S> {
    fn new(r: &mut Rng, embed: usize, channels: usize, fuse_prompt: bool) -> Self {
        DecoderStage {
            reassemble_w: randn_tensor(r, &[channels, embed, 1, 1], 0.05),
            reassemble_b: zeros_param(&[channels]),
            fuse_w: randn_tensor(r, &[channels, channels, 3, 3], 0.05),
            fuse_b: zeros_param(&[channels]),
            prompt: fuse_prompt.then(|| PromptFusion::new(r, channels)),
        }
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.reassemble_w"), self.reassemble_w.clone()));
        out.push((format!("{prefix}.reassemble_b"), self.reassemble_b.clone()));
        out.push((format!("{prefix}.fuse_w"), self.fuse_w.clone()));
        out.push((format!("{prefix}.fuse_b"), self.fuse_b.clone()));
        if let Some(p) = &self.prompt {
            p.params(&format!("{prefix}.prompt"), out);
        }
    }
}

/// The full elevation network.
pub struct PromptNet<S: Scalar> {
    pub config: ModelConfig,
    encoder: VitEncoder<S>,
    stages: Vec<DecoderStage<S>>,
    head1_w: Tensor<S>,
    head1_b: Tensor<S>,
    head2_w: Tensor<S>,
    head2_b: Tensor<S>,
}

impl<S: Scalar> PromptNet<S> {
    pub fn new(r: &mut Rng, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder = VitEncoder::new(
            r,
            config.input_size,
            3,
            config.vit_patch,
            config.embed_dim,
            config.depth,
            config.heads,
        );
        let stages = (0..4)
            .map(|s| {
                DecoderStage::new(
                    r,
                    config.embed_dim,
                    config.decoder_channels[s],
                    config.fusion_stages[s],
                )
            })
            .collect();
        let c = config.decoder_channels[3];
        Ok(PromptNet {
            encoder,
            stages,
            head1_w: randn_tensor(r, &[c, c, 3, 3], 0.05),
            head1_b: zeros_param(&[c]),
            head2_w: randn_tensor(r, &[1, c, 3, 3], 0.05),
            head2_b: zeros_param(&[1]),
            config,
        })
    }

    /// Encoder taps at the configured layers, reshaped to [D, S/p, S/p].
    pub fn vit_encode(&self, rgb: &Tensor<S>) -> Result<Vec<Tensor<S>>, ShapeError> {
        let side = self.config.input_size / self.config.vit_patch;
        let d = self.config.embed_dim;
        let all = self.encoder.encode(rgb)?;
        self.config
            .tap_layers
            .iter()
            .map(|&layer| {
                all[layer - 1]
                    .transpose()?
                    .reshape(&[d, side, side])
            })
            .collect()
    }

    /// DPT-style decode: reassemble each tap at its stage resolution, fuse
    /// coarse to fine, inject the prompt where configured, and regress one
    /// elevation channel at full input resolution.
    pub fn dpt_decode(
        &self,
        features: &[Tensor<S>],
        prompt: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>, ShapeError> {
        let s_out = self.config.input_size;
        let mut prev: Option<Tensor<S>> = None;
        for (s, stage) in self.stages.iter().enumerate() {
            let size = self.config.stage_size(s);
            let mut x = features[s]
                .conv2d(&stage.reassemble_w, Some(&stage.reassemble_b), 1, 0)?
                .bilinear_resize(size, size)?;
            if let Some(p) = prev {
                x = x.add(&p.bilinear_resize(size, size)?)?;
            }
            if let (Some(pf), Some(pr)) = (&stage.prompt, prompt) {
                x = x.add(&pf.inject(pr, size)?)?;
            }
            prev = Some(x.conv2d(&stage.fuse_w, Some(&stage.fuse_b), 1, 1)?.gelu());
        }
        prev.expect("four decoder stages")
            .conv2d(&self.head1_w, Some(&self.head1_b), 1, 1)?
            .gelu()
            .bilinear_resize(s_out, s_out)?
            .conv2d(&self.head2_w, Some(&self.head2_b), 1, 1)
    }

    /// End-to-end: [3,S,S] image plus optional [1,h,w] normalized prompt to
    /// a [1,S,S] normalized elevation map.
    pub fn forward(
        &self,
        rgb: &Tensor<S>,
        prompt: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>, ShapeError> {
        let features = self.vit_encode(rgb)?;
        self.dpt_decode(&features, prompt)
    }

    pub fn params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        self.encoder.params("encoder", &mut out);
        for (s, stage) in self.stages.iter().enumerate() {
            stage.params(&format!("decoder.stage{s}"), &mut out);
        }
        out.push(("head.conv1_w".into(), self.head1_w.clone()));
        out.push(("head.conv1_b".into(), self.head1_b.clone()));
        out.push(("head.conv2_w".into(), self.head2_w.clone()));
        out.push(("head.conv2_b".into(), self.head2_b.clone()));
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor<S>> {
        self.params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn to_store(&self) -> WeightStore {
        weights::store_from_params(self.config.echo(), &self.params())
    }

    /// Overwrite all parameters from a store; names, shapes, and the config
    /// echo must match exactly.
    pub fn load_store(&self, store: &WeightStore) -> Result<(), WeightError> {
        weights::load_params(store, &self.config.echo(), &self.params())
    }
}

/// Per-patch normalization record: `normalized = (v - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub mean: f64,
    pub scale: f64,
}

impl NormRecord {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }
}

/// Normalize a prompt (and optionally the matching high-res target) for the
/// network: subtract the prompt mean, divide by the global [`NORM_SCALE`].
/// Prompt nodata cells become 0 (the mean) so voids read as "no signal";
/// target nodata passes through unchanged.
pub fn normalize_io(
    prompt: &RasterGrid,
    hr_target: Option<&RasterGrid>,
) -> Result<(RasterGrid, Option<RasterGrid>, NormRecord), ModelError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in prompt.valid_values() {
        sum += v as f64;
        n += 1;
    }
    if n == 0 {
        return Err(ModelError::AllNodataPrompt);
    }
    let record = NormRecord {
        mean: sum / n as f64,
        scale: NORM_SCALE,
    };
    let norm_prompt = prompt.like(
        prompt
            .values
            .iter()
            .map(|&v| {
                if v == prompt.nodata {
                    0.0
                } else {
                    record.normalize(v as f64) as f32
                }
            })
            .collect(),
    );
    let norm_target = hr_target.map(|t| {
        t.like(
            t.values
                .iter()
                .map(|&v| {
                    if v == t.nodata {
                        v
                    } else {
                        record.normalize(v as f64) as f32
                    }
                })
                .collect(),
        )
    });
    Ok((norm_prompt, norm_target, record))
}
