//! Core algorithms for prompt-guided high-resolution elevation estimation.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! raster containers and codecs, a reverse-mode autodiff engine, the
//! prompt-fusion ViT/DPT network, training, seamless mosaicking, D8
//! hydrology, and the evaluation metric suite. File IO, CLI, and JSON
//! manifests live in the companion `p2d-cli` crate.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pipeline can be
//! embedded anywhere a heap exists.

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod eval;
pub mod hydro;
pub mod math;
pub mod model;
pub mod mosaic;
pub mod raster;
pub mod rng;
pub mod terrain;
pub mod train;
