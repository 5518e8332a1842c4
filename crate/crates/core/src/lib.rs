//! Benchmarking engine for frozen pathology tile encoders.
//!
//! Slides are tiled from tissue masks, tiles are embedded by an external (or
//! mock) encoder, slide-level labels are learned with gated-attention
//! multiple-instance learning under Monte-Carlo cross-validation, and
//! encoders are compared with paired signed-rank tests under FDR control.

pub mod error;
pub mod featstore;
pub mod gma;
pub mod mccv;
pub mod metrics;
pub mod optim;
pub mod paramfile;
pub mod preprocess;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod synthbench;
pub mod tileprobe;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GmaParams64 = gma::GmaParams<f64>;
pub type GmaParams32 = gma::GmaParams<f32>;
pub type Bag64 = gma::Bag<f64>;
pub type Bag32 = gma::Bag<f32>;
pub type ProbeParams64 = tileprobe::ProbeParams<f64>;
pub type ProbeParams32 = tileprobe::ProbeParams<f32>;
pub type TileSet64 = tileprobe::TileSet<f64>;
pub type TileSet32 = tileprobe::TileSet<f32>;
pub type OptimState64 = optim::OptimState<f64>;
pub type OptimState32 = optim::OptimState<f32>;
