//! Gridded multimodal raster classification with early, late and
//! mixture-of-experts fusion.
//!
//! Pipeline: [`ingest`] rasters and labeled points into per-cell tiles,
//! [`dataset`] splits, rebalances and normalizes them, [`models`] builds the
//! fusion networks, [`training`] runs seeded trials and [`evaluation`] scores
//! and reports them. [`synthgen`] makes synthetic scenes in the same formats.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type FusionModelF32 = models::FusionModel<f32>;
pub type FusionModelF64 = models::FusionModel<f64>;
/// Exact weights for checking first-layer adaptation without rounding.
pub type ExactWeight = num_rational::Ratio<i64>;
