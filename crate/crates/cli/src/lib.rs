//! File IO, JSON manifests, and pipeline orchestration around `p2d-core`.

pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod registry;
