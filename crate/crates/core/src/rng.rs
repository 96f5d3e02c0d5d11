//! Deterministic random number helpers.
//!
//! Everything stochastic in the pipeline (terrain synthesis, weight init,
//! prompt noise, batch shuffling) draws from ChaCha8 streams so a fixed
//! seed reproduces bit-identical runs on any platform.

use rand_core::{RngCore, SeedableRng};

pub type Rng = rand_chacha::ChaCha8Rng;

/// Stream-separated rng: same `seed` with different `stream` values gives
/// independent deterministic sequences.
pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    Rng::from_seed(key)
}

/// Uniform in [0, 1).
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [lo, hi).
pub fn uniform_range(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Uniform integer in [0, n).
pub fn uniform_usize(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut Rng) -> f64 {
    let u1 = loop {
        let u = uniform(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform(rng);
    let r = num_traits::Float::sqrt(-2.0 * num_traits::Float::ln(u1));
    let theta = 2.0 * core::f64::consts::PI * u2;
    r * num_traits::Float::cos(theta)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}
