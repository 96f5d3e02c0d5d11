//! Loss construction, prompt-regime sampling, and the training loop.
//!
//! Three prompt regimes feed the same network: a coarse downsampled surface
//! (the main estimation task), a high-res surface whose central square was
//! patched from the coarse source (void filling), and a bare-earth terrain
//! prompt (surface updating). Training is Adam over shuffled batches with an
//! L1 + edge-gradient loss, fully deterministic per seed.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::autodiff::{Adam, AdamConfig, ShapeError, Tensor};
use crate::math::Scalar;
use crate::model::{
    normalize_io, ClassifierConfig, ModelConfig, ModelError, NormRecord, PromptNet,
    SceneClassifier, WeightError, WeightStore,
};
use crate::raster::RasterGrid;
use crate::rng;
use crate::terrain::{self, SceneClass, SceneSample, TerrainParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    LowRes,
    VoidFilled,
    TerrainOnly,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [
        PromptKind::LowRes,
        PromptKind::VoidFilled,
        PromptKind::TerrainOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::LowRes => "lowres",
            PromptKind::VoidFilled => "void",
            PromptKind::TerrainOnly => "terrain",
        }
    }

    pub fn from_name(name: &str) -> Option<PromptKind> {
        match name {
            "lowres" => Some(PromptKind::LowRes),
            "void" => Some(PromptKind::VoidFilled),
            "terrain" => Some(PromptKind::TerrainOnly),
            _ => None,
        }
    }
}

/// Which prompt regime an example uses, and its degradation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptSpec {
    pub kind: PromptKind,
    /// Downsample factor for the coarse prompt (LowRes and the void filler).
    pub factor: usize,
    /// Side of the patched square as a fraction of the grid (VoidFilled).
    pub hole_fraction: f64,
    /// Gaussian noise on the coarse prompt, meters.
    pub bias_sigma: f64,
    /// Upward canopy-coverage bias on the coarse prompt, meters.
    pub canopy_bias: f64,
}

impl PromptSpec {
    pub fn new(kind: PromptKind) -> Self {
        PromptSpec {
            kind,
            factor: 8,
            hole_fraction: 0.5,
            bias_sigma: 1.0,
            canopy_bias: 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.kind == PromptKind::LowRes && self.factor < 2 {
            return Err(TrainError::BadSpec("LowRes factor must be >= 2".into()));
        }
        if self.kind == PromptKind::VoidFilled
            && !(self.hole_fraction > 0.0 && self.hole_fraction < 1.0)
        {
            return Err(TrainError::BadSpec(
                "hole_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    BadSpec(String),
    EmptyDataset,
    Model(ModelError),
    Shape(ShapeError),
    Weights(WeightError),
    Optimizer(&'static str),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::BadSpec(msg) => write!(f, "bad prompt spec: {msg}"),
            TrainError::EmptyDataset => write!(f, "training dataset is empty"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Shape(e) => write!(f, "{e}"),
            TrainError::Weights(e) => write!(f, "{e}"),
            TrainError::Optimizer(msg) => write!(f, "optimizer: {msg}"),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<ShapeError> for TrainError {
    fn from(e: ShapeError) -> Self {
        TrainError::Shape(e)
    }
}

impl From<WeightError> for TrainError {
    fn from(e: WeightError) -> Self {
        TrainError::Weights(e)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_edge: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub model: ModelConfig,
    pub terrain: TerrainParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch_size: 2,
            epochs: 10,
            lambda_edge: 0.9,
            seed: 0,
            train_samples: 200,
            val_samples: 50,
            model: ModelConfig::default(),
            terrain: TerrainParams::default(),
        }
    }
}

/// L1 plus edge-aware loss: mean|d| + lambda * (mean|dx d| + mean|dy d|),
/// d = prediction - truth, forward differences along each axis.
pub fn edge_loss<S: Scalar>(
    e_gt: &Tensor<S>,
    e_hat: &Tensor<S>,
    lambda: f64,
) -> Result<Tensor<S>, ShapeError> {
    let d = e_hat.sub(e_gt)?;
    let shape = d.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let l1 = d.abs().mean();
    if lambda == 0.0 {
        return Ok(l1);
    }
    let mut loss = l1;
    if w > 1 {
        let dx = d
            .crop(&[0, 0, 1], &[c, h, w - 1])?
            .sub(&d.crop(&[0, 0, 0], &[c, h, w - 1])?)?;
        loss = loss.add(&dx.abs().mean().scale(S::from_f64(lambda)))?;
    }
    if h > 1 {
        let dy = d
            .crop(&[0, 1, 0], &[c, h - 1, w])?
            .sub(&d.crop(&[0, 0, 0], &[c, h - 1, w])?)?;
        loss = loss.add(&dy.abs().mean().scale(S::from_f64(lambda)))?;
    }
    Ok(loss)
}

/// One training/inference example in normalized units.
pub struct Example<S: Scalar> {
    pub rgb: Tensor<S>,
    pub prompt: Tensor<S>,
    pub target: Tensor<S>,
    pub record: NormRecord,
    /// VoidFilled only: true over the patched square.
    pub hole_mask: Option<Vec<bool>>,
}

/// Render a scene and derive the (rgb, prompt, target) triple for a regime.
pub fn build_example<S: Scalar>(
    r: &mut rng::Rng,
    sample: &SceneSample,
    spec: &PromptSpec,
) -> Result<Example<S>, TrainError> {
    spec.validate()?;
    let size = sample.dsm.rows;
    let rgb_data = terrain::render_pseudo_rgb(r, sample);
    let rgb = Tensor::from_vec(
        &[3, size, size],
        rgb_data.iter().map(|&v| S::from_f32(v)).collect(),
    );
    let (prompt_grid, hole_mask): (RasterGrid, Option<Vec<bool>>) = match spec.kind {
        PromptKind::LowRes => (
            terrain::degrade_to_prompt(r, sample, spec.factor, spec.bias_sigma, spec.canopy_bias),
            None,
        ),
        PromptKind::VoidFilled => {
            let lr = terrain::degrade_to_prompt(
                r,
                sample,
                spec.factor,
                spec.bias_sigma,
                spec.canopy_bias,
            );
            let (patched, mask) = terrain::carve_void(&sample.dsm, &lr, spec.hole_fraction);
            (patched, Some(mask))
        }
        PromptKind::TerrainOnly => (sample.dtm.clone(), None),
    };
    let (norm_prompt, norm_target, record) = normalize_io(&prompt_grid, Some(&sample.dsm))?;
    let norm_target = norm_target.expect("target supplied");
    let to_tensor = |g: &RasterGrid| {
        Tensor::from_vec(
            &[1, g.rows, g.cols],
            g.values.iter().map(|&v| S::from_f32(v)).collect(),
        )
    };
    Ok(Example {
        rgb,
        prompt: to_tensor(&norm_prompt),
        target: to_tensor(&norm_target),
        record,
        hole_mask,
    })
}

/// Per-epoch losses plus the final weights.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub store: WeightStore,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

fn dataset<S: Scalar>(
    scene: SceneClass,
    spec: &PromptSpec,
    config: &TrainConfig,
    count: usize,
    seed_stream: u64,
) -> Result<Vec<Example<S>>, TrainError> {
    (0..count)
        .map(|i| {
            let mut r = rng::seeded(config.seed, seed_stream + i as u64);
            let sample = terrain::generate_scene(&mut r, scene, &config.terrain);
            build_example(&mut r, &sample, spec)
        })
        .collect()
}

fn mean_loss<S: Scalar>(
    net: &PromptNet<S>,
    examples: &[Example<S>],
    lambda: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for ex in examples {
        let pred = net.forward(&ex.rgb, Some(&ex.prompt))?;
        total += edge_loss(&ex.target, &pred, lambda)?.item().as_f64();
    }
    Ok(total / examples.len() as f64)
}

/// Train one model for one (regime, landscape) pair. The main estimation
/// regime trains from random init; the other two are fine-tuned from a
/// supplied checkpoint when given.
pub fn train(
    scene: SceneClass,
    spec: &PromptSpec,
    config: &TrainConfig,
    init: Option<&WeightStore>,
) -> Result<TrainOutput, TrainError> {
    spec.validate()?;
    if config.train_samples == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let train_set: Vec<Example<f32>> =
        dataset(scene, spec, config, config.train_samples, 1_000_000)?;
    // validation scenes come from a disjoint seed stream (held-out sites)
    let val_set: Vec<Example<f32>> = dataset(scene, spec, config, config.val_samples, 2_000_000)?;

    let mut model_rng = rng::seeded(config.seed, 0);
    let net = PromptNet::<f32>::new(&mut model_rng, config.model.clone())?;
    if let Some(store) = init {
        net.load_store(store)?;
    }
    let mut opt = Adam::new(
        net.param_tensors(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );

    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = rng::seeded(config.seed, 3_000_000 + epoch as u64);
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut loss: Option<Tensor<f32>> = None;
            for &i in batch {
                let ex = &train_set[i];
                let pred = net.forward(&ex.rgb, Some(&ex.prompt))?;
                let l = edge_loss(&ex.target, &pred, config.lambda_edge)?;
                loss = Some(match loss {
                    Some(acc) => acc.add(&l)?,
                    None => l,
                });
            }
            let loss = loss
                .expect("non-empty batch")
                .scale(1.0 / batch.len() as f32);
            epoch_loss += loss.item() as f64;
            batches += 1;
            opt.zero_grads();
            loss.backward()?;
            opt.step().map_err(TrainError::Optimizer)?;
        }
        opt.zero_grads();
        train_losses.push(epoch_loss / batches as f64);
        if val_set.is_empty() {
            val_losses.push(f64::NAN);
        } else {
            val_losses.push(mean_loss(&net, &val_set, config.lambda_edge)?);
        }
    }
    Ok(TrainOutput {
        store: net.to_store(),
        train_losses,
        val_losses,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Total sample count; classes are cycled for exact balance.
    pub train_samples: usize,
    pub classifier: ClassifierConfig,
    pub terrain: TerrainParams,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            train_samples: 300,
            classifier: ClassifierConfig::default(),
            terrain: TerrainParams::default(),
        }
    }
}

fn classifier_example(seed: u64, stream: u64, terrain: &TerrainParams, class: SceneClass) -> (Tensor<f32>, usize) {
    let mut r = rng::seeded(seed, stream);
    let sample = terrain::generate_scene(&mut r, class, terrain);
    let size = terrain.size;
    let rgb = terrain::render_pseudo_rgb(&mut r, &sample);
    (Tensor::from_vec(&[3, size, size], rgb), class.index())
}

/// Train the scene classifier on class-balanced synthetic renders. Uses a
/// squared-error loss against one-hot targets on the probability simplex.
pub fn train_classifier(
    config: &ClassifierTrainConfig,
) -> Result<(WeightStore, Vec<f64>), TrainError> {
    if config.train_samples == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let examples: Vec<(Tensor<f32>, usize)> = (0..config.train_samples)
        .map(|i| {
            classifier_example(
                config.seed,
                4_000_000 + i as u64,
                &config.terrain,
                SceneClass::ALL[i % 3],
            )
        })
        .collect();
    let mut model_rng = rng::seeded(config.seed, 1);
    let clf = SceneClassifier::<f32>::new(&mut model_rng, config.classifier.clone());
    let mut opt = Adam::new(
        clf.param_tensors(),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = rng::seeded(config.seed, 5_000_000 + epoch as u64);
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut loss: Option<Tensor<f32>> = None;
            for &i in batch {
                let (rgb, label) = &examples[i];
                let p = clf.probabilities(rgb)?;
                let mut onehot = alloc::vec![0.0f32; 3];
                onehot[*label] = 1.0;
                let diff = p.sub(&Tensor::from_vec(&[1, 3], onehot))?;
                let l = diff.mul(&diff)?.sum();
                loss = Some(match loss {
                    Some(acc) => acc.add(&l)?,
                    None => l,
                });
            }
            let loss = loss
                .expect("non-empty batch")
                .scale(1.0 / batch.len() as f32);
            epoch_loss += loss.item() as f64;
            batches += 1;
            opt.zero_grads();
            loss.backward()?;
            opt.step().map_err(TrainError::Optimizer)?;
        }
        opt.zero_grads();
        losses.push(epoch_loss / batches as f64);
    }
    Ok((clf.to_store(), losses))
}

/// Held-out accuracy of a trained classifier store on freshly generated
/// scenes from a disjoint seed stream. Returns per-class (correct, total).
pub fn classifier_confusion(
    store: &WeightStore,
    config: &ClassifierTrainConfig,
    samples: usize,
    eval_seed: u64,
) -> Result<[[usize; 3]; 3], TrainError> {
    let mut dummy = rng::seeded(0, 0);
    let clf = SceneClassifier::<f32>::new(&mut dummy, config.classifier.clone());
    clf.load_store(store)?;
    let mut confusion = [[0usize; 3]; 3];
    for i in 0..samples {
        let class = SceneClass::ALL[i % 3];
        let (rgb, label) = classifier_example(eval_seed, 6_000_000 + i as u64, &config.terrain, class);
        let (pred, _) = clf.classify(&rgb)?;
        confusion[label][pred.index()] += 1;
    }
    Ok(confusion)
}

/// Macro-averaged F1 over a 3-class confusion matrix (rows = truth).
pub fn macro_f1(confusion: &[[usize; 3]; 3]) -> f64 {
    let mut total = 0.0;
    for c in 0..3 {
        let tp = confusion[c][c] as f64;
        let fp: f64 = (0..3).filter(|&r| r != c).map(|r| confusion[r][c] as f64).sum();
        let fn_: f64 = (0..3).filter(|&p| p != c).map(|p| confusion[c][p] as f64).sum();
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += f1;
    }
    total / 3.0
}
