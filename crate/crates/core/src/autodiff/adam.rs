//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::math::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over a fixed parameter list. Gradients are read from the
/// tensors and left untouched; the caller zeroes them after each step.
pub struct Adam<S: Scalar> {
    config: AdamConfig,
    params: Vec<Tensor<S>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: Vec<Tensor<S>>, config: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            config,
            params,
            m,
            v,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a populated gradient are an error:
    /// it means backward() was not run over the full graph.
    pub fn step(&mut self) -> Result<(), &'static str> {
        self.step += 1;
        let t = self.step as f64;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - num_traits::Float::powi(beta1, t as i32);
        let bc2 = 1.0 - num_traits::Float::powi(beta2, t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().ok_or("missing gradient for parameter")?;
            let mut data = p.value();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..data.len() {
                let g = grad[j].as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let upd = lr * mhat / (num_traits::Float::sqrt(vhat) + eps);
                data[j] = S::from_f64(data[j].as_f64() - upd);
            }
            p.set_data(data);
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
