//! Tiny ViT encoder shared by the elevation network and the scene
//! classifier: strided patch embedding, learned positional embeddings, and
//! pre-norm transformer blocks (multi-head self-attention + GELU MLP).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{ShapeError, Tensor};
use crate::math::Scalar;
use crate::rng::{self, Rng};

const LN_EPS: f64 = 1e-5;

/// Gaussian init, ViT-style 0.02 standard deviation.
pub(crate) fn randn_tensor<S: Scalar>(r: &mut Rng, shape: &[usize], std: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::from_f64(rng::normal(r) * std)).collect();
    Tensor::param(shape, data)
}

pub(crate) fn zeros_param<S: Scalar>(shape: &[usize]) -> Tensor<S> {
    Tensor::param(shape, vec![S::zero(); shape.iter().product()])
}

pub(crate) struct Block<S: Scalar> {
    wq: Tensor<S>,
    bq: Tensor<S>,
    wk: Tensor<S>,
    bk: Tensor<S>,
    wv: Tensor<S>,
    bv: Tensor<S>,
    wo: Tensor<S>,
    bo: Tensor<S>,
    w1: Tensor<S>,
    b1: Tensor<S>,
    w2: Tensor<S>,
    b2: Tensor<S>,
}

impl<S: Scalar> Block<S> {
    fn new(r: &mut Rng, d: usize) -> Self {
        let hidden = 4 * d;
        Block {
            wq: randn_tensor(r, &[d, d], 0.02),
            bq: zeros_param(&[d]),
            wk: randn_tensor(r, &[d, d], 0.02),
            bk: zeros_param(&[d]),
            wv: randn_tensor(r, &[d, d], 0.02),
            bv: zeros_param(&[d]),
            wo: randn_tensor(r, &[d, d], 0.02),
            bo: zeros_param(&[d]),
            w1: randn_tensor(r, &[d, hidden], 0.02),
            b1: zeros_param(&[hidden]),
            w2: randn_tensor(r, &[hidden, d], 0.02),
            b2: zeros_param(&[d]),
        }
    }

    fn attention(&self, x: &Tensor<S>, heads: usize) -> Result<Tensor<S>, ShapeError> {
        let shape = x.shape();
        let (t, d) = (shape[0], shape[1]);
        let dh = d / heads;
        let q = x.matmul(&self.wq)?.add_row(&self.bq)?;
        let k = x.matmul(&self.wk)?.add_row(&self.bk)?;
        let v = x.matmul(&self.wv)?.add_row(&self.bv)?;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.crop(&[0, h * dh], &[t, dh])?;
            let kh = k.crop(&[0, h * dh], &[t, dh])?;
            let vh = v.crop(&[0, h * dh], &[t, dh])?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale).softmax();
            outs.push(scores.matmul(&vh)?);
        }
        Tensor::concat(&outs, 1)?
            .matmul(&self.wo)?
            .add_row(&self.bo)
    }

    fn forward(&self, x: &Tensor<S>, heads: usize) -> Result<Tensor<S>, ShapeError> {
        let attn = self.attention(&x.layer_norm(LN_EPS), heads)?;
        let x = x.add(&attn)?;
        let mlp = x
            .layer_norm(LN_EPS)
            .matmul(&self.w1)?
            .add_row(&self.b1)?
            .gelu()
            .matmul(&self.w2)?
            .add_row(&self.b2)?;
        x.add(&mlp)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        for (name, t) in [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
}

pub struct VitEncoder<S: Scalar> {
    pub input_size: usize,
    pub patch: usize,
    pub embed: usize,
    pub heads: usize,
    patch_w: Tensor<S>,
    patch_b: Tensor<S>,
    pos_emb: Tensor<S>,
    blocks: Vec<Block<S>>,
}

impl<S: Scalar> VitEncoder<S> {
    pub fn new(
        r: &mut Rng,
        input_size: usize,
        in_channels: usize,
        patch: usize,
        embed: usize,
        depth: usize,
        heads: usize,
    ) -> Self {
        let side = input_size / patch;
        let tokens = side * side;
        VitEncoder {
            input_size,
            patch,
            embed,
            heads,
            patch_w: randn_tensor(r, &[embed, in_channels, patch, patch], 0.02),
            patch_b: zeros_param(&[embed]),
            pos_emb: randn_tensor(r, &[tokens, embed], 0.02),
            blocks: (0..depth).map(|_| Block::new(r, embed)).collect(),
        }
    }

    pub fn tokens_per_side(&self) -> usize {
        self.input_size / self.patch
    }

    /// For the permutation-equivariance test: remove positional information.
    #[cfg(test)]
    pub fn zero_pos_emb(&self) {
        let n = self.pos_emb.len();
        self.pos_emb.set_data(vec![S::zero(); n]);
    }

    /// Token grids [T, D] after every transformer block, in depth order.
    pub fn encode(&self, rgb: &Tensor<S>) -> Result<Vec<Tensor<S>>, ShapeError> {
        let side = self.tokens_per_side();
        let tokens = side * side;
        // [C_in,S,S] -> [D, side, side] -> [D, T] -> [T, D]
        let embedded = rgb
            .conv2d(&self.patch_w, Some(&self.patch_b), self.patch, 0)?
            .reshape(&[self.embed, tokens])?
            .transpose()?;
        let mut x = embedded.add(&self.pos_emb)?;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(&x, self.heads)?;
            taps.push(x.clone());
        }
        Ok(taps)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.patch_w"), self.patch_w.clone()));
        out.push((format!("{prefix}.patch_b"), self.patch_b.clone()));
        out.push((format!("{prefix}.pos_emb"), self.pos_emb.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.block{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn encoder(seed: u64) -> VitEncoder<f64> {
        let mut r = rng::seeded(seed, 100);
        VitEncoder::new(&mut r, 8, 3, 4, 8, 2, 2)
    }

    #[test]
    fn token_shapes() {
        let enc = encoder(1);
        let mut r = rng::seeded(2, 0);
        let img = randn_tensor::<f64>(&mut r, &[3, 8, 8], 1.0);
        let taps = enc.encode(&img).unwrap();
        assert_eq!(taps.len(), 2);
        for t in &taps {
            assert_eq!(t.shape(), vec![4, 8]); // 2x2 patches, embed 8
        }
    }

    #[test]
    fn deterministic_forward() {
        let enc = encoder(3);
        let mut r = rng::seeded(4, 0);
        let img = randn_tensor::<f64>(&mut r, &[3, 8, 8], 1.0);
        let a = enc.encode(&img).unwrap().pop().unwrap().value();
        let b = enc.encode(&img).unwrap().pop().unwrap().value();
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_equivariant_without_pos_emb() {
        let enc = encoder(5);
        enc.zero_pos_emb();
        let mut r = rng::seeded(6, 0);
        // 2x2 patch grid of 4x4 patches; build an image, then swap the two
        // top patches and check tokens swap accordingly
        let img_data: Vec<f64> = (0..3 * 8 * 8).map(|_| rng::normal(&mut r)).collect();
        let mut swapped = img_data.clone();
        for ch in 0..3 {
            for row in 0..4 {
                for col in 0..4 {
                    let a = ch * 64 + row * 8 + col;
                    let b = ch * 64 + row * 8 + col + 4;
                    swapped.swap(a, b);
                }
            }
        }
        let t1 = enc
            .encode(&Tensor::from_vec(&[3, 8, 8], img_data))
            .unwrap()
            .pop()
            .unwrap()
            .value();
        let t2 = enc
            .encode(&Tensor::from_vec(&[3, 8, 8], swapped))
            .unwrap()
            .pop()
            .unwrap()
            .value();
        // token order: [p00, p01, p10, p11]; swapping patches 0 and 1 in the
        // image must swap tokens 0 and 1
        let d = 8;
        for j in 0..d {
            assert!((t1[j] - t2[d + j]).abs() < 1e-12);
            assert!((t1[d + j] - t2[j]).abs() < 1e-12);
            assert!((t1[2 * d + j] - t2[2 * d + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcheck_through_block() {
        let mut r = rng::seeded(7, 0);
        let x0: Vec<f64> = (0..4 * 8).map(|_| rng::normal(&mut r) * 0.5).collect();
        let err = gradcheck::check_scalar_fn::<f64, _>(
            |x| {
                let mut rr = rng::seeded(8, 0);
                let block = Block::<f64>::new(&mut rr, 8);
                let leaf = Tensor::param(&[4, 8], x.to_vec());
                let loss = block.forward(&leaf, 2).unwrap().mean();
                (leaf, loss)
            },
            &x0,
            1e-3,
        );
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn gradcheck_encoder_params() {
        // differentiate wrt the patch embedding weights through the full
        // encoder stack
        let mut r = rng::seeded(9, 0);
        let img: Vec<f64> = (0..3 * 8 * 8).map(|_| rng::uniform(&mut r)).collect();
        let w0: Vec<f64> = (0..8 * 3 * 4 * 4).map(|_| rng::normal(&mut r) * 0.1).collect();
        let err = gradcheck::check_scalar_fn::<f64, _>(
            |w| {
                let mut rr = rng::seeded(10, 0);
                let leaf = Tensor::param(&[8, 3, 4, 4], w.to_vec());
                let enc = VitEncoder::<f64> {
                    patch_w: leaf.clone(),
                    ..VitEncoder::new(&mut rr, 8, 3, 4, 8, 2, 2)
                };
                let img_t = Tensor::from_vec(&[3, 8, 8], img.clone());
                let taps = enc.encode(&img_t).unwrap();
                (leaf, taps.last().unwrap().mean())
            },
            &w0,
            1e-3,
        );
        assert!(err < 1e-6, "max rel err {err}");
    }
}
