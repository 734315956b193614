//! Simulation and evaluation toolkit for RGB-D indoor panorama synthesis.
//!
//! - [`geometry`]: equirectangular pixel/direction mapping, solid-angle
//!   weights, camera and LiDAR visibility masks.
//! - [`sensor`]: random sensor rigs and masked generator inputs.
//! - [`scene`]: procedural rooms, layout depth and the layout/residual split.
//! - [`io`]: PNG rasters, TOML manifests and statistics, binary weights.
//! - [`tensor`]: a small reverse-mode tensor engine with circular padding.
//! - [`faed`]: the Fréchet auto-encoder distance.
//! - [`corruption`]: the five disturbance generators used to validate FAED.
//! - [`metrics`]: PSNR, SSIM, depth errors, layout IoU and corner error.
//! - [`bips`]: the bi-modal generator, discriminator and adversarial training.
//! - [`sweep`]: FAED measured against increasingly corrupted corpora.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod bips;
pub mod corruption;
pub mod error;
pub mod faed;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod scene;
pub mod sensor;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::ErpGrid;
pub use scalar::Scalar;
pub use sensor::Seed;

/// Single-precision panorama, the working type for images and training.
pub type Grid = ErpGrid<f32>;
/// Double-precision panorama, used for geometry oracles.
pub type Grid64 = ErpGrid<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Scene = scene::RgbdScene<f32>;
pub type Scene64 = scene::RgbdScene<f64>;
pub type FeatureStats64 = faed::FeatureStats<f64>;
