//! Lightweight scene classifier: a 2-block ViT over 16x16 patches with
//! mean-pooled tokens and a zero-initialized linear head, predicting
//! urban / vegetated / bare.

use alloc::string::String;
use alloc::vec::Vec;

use super::vit::{zeros_param, VitEncoder};
use super::weights::{self, WeightError, WeightStore};
use crate::autodiff::{ShapeError, Tensor};
use crate::math::Scalar;
use crate::rng::Rng;
use crate::terrain::SceneClass;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub input_size: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_size: 64,
            patch: 16,
            embed_dim: 32,
            depth: 2,
            heads: 4,
        }
    }
}

impl ClassifierConfig {
    pub fn echo(&self) -> String {
        alloc::format!(
            "classifier;input_size={};patch={};embed_dim={};depth={};heads={}",
            self.input_size,
            self.patch,
            self.embed_dim,
            self.depth,
            self.heads
        )
    }

    pub fn from_echo(echo: &str) -> Option<ClassifierConfig> {
        let rest = echo.strip_prefix("classifier;")?;
        let mut cfg = ClassifierConfig::default();
        for field in rest.split(';') {
            let (key, val) = field.split_once('=')?;
            match key {
                "input_size" => cfg.input_size = val.parse().ok()?,
                "patch" => cfg.patch = val.parse().ok()?,
                "embed_dim" => cfg.embed_dim = val.parse().ok()?,
                "depth" => cfg.depth = val.parse().ok()?,
                "heads" => cfg.heads = val.parse().ok()?,
                _ => return None,
            }
        }
        Some(cfg)
    }
}

pub struct SceneClassifier<S: Scalar> {
    pub config: ClassifierConfig,
    encoder: VitEncoder<S>,
    head_w: Tensor<S>,
    head_b: Tensor<S>,
}

impl<S: Scalar> SceneClassifier<S> {
    pub fn new(r: &mut Rng, config: ClassifierConfig) -> Self {
        let encoder = VitEncoder::new(
            r,
            config.input_size,
            3,
            config.patch,
            config.embed_dim,
            config.depth,
            config.heads,
        );
        SceneClassifier {
            encoder,
            // zero head: untrained classifier answers uniform 1/3
            head_w: zeros_param(&[config.embed_dim, 3]),
            head_b: zeros_param(&[3]),
            config,
        }
    }

    /// Class probabilities, shape [1, 3].
    pub fn probabilities(&self, rgb: &Tensor<S>) -> Result<Tensor<S>, ShapeError> {
        let tokens = self.encoder.encode(rgb)?.pop().expect("depth >= 1");
        let t = tokens.shape()[0];
        // mean over tokens as a [1,T] x [T,D] product
        let pool = Tensor::from_vec(&[1, t], alloc::vec![S::from_f64(1.0 / t as f64); t]);
        let logits = pool
            .matmul(&tokens)?
            .matmul(&self.head_w)?
            .add_row(&self.head_b)?;
        Ok(logits.softmax())
    }

    /// Hard decision plus the probability vector.
    pub fn classify(&self, rgb: &Tensor<S>) -> Result<(SceneClass, [f64; 3]), ShapeError> {
        let p = self.probabilities(rgb)?.value();
        let probs = [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()];
        let mut best = 0;
        for i in 1..3 {
            if probs[i] > probs[best] {
                best = i;
            }
        }
        Ok((SceneClass::ALL[best], probs))
    }

    pub fn params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        self.encoder.params("encoder", &mut out);
        out.push(("head.w".into(), self.head_w.clone()));
        out.push(("head.b".into(), self.head_b.clone()));
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor<S>> {
        self.params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn to_store(&self) -> WeightStore {
        weights::store_from_params(self.config.echo(), &self.params())
    }

    pub fn load_store(&self, store: &WeightStore) -> Result<(), WeightError> {
        weights::load_params(store, &self.config.echo(), &self.params())
    }
}
