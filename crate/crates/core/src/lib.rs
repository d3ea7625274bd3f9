//! Semantic-structure-aware class activation maps.
//!
//! Given backbone feature maps exported per stage and the final classifier
//! weights, this crate builds the seed CAM, derives a parameter-free
//! pixel-affinity matrix for each stage, uses it to spread the seed CAM over
//! semantically similar pixels, and fuses the per-stage results. It also
//! ships the metrics used to score CAMs: box localization error, foreground
//! IoU curves and mIoU.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the element type to the `f32` used by the on-disk formats.

pub mod commands;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod kernels;
pub mod manifest;
pub mod pipeline;
pub mod scalar;
pub mod ssm;
pub mod tensor;

pub use error::{Result, SsaError};
pub use evaluation::{BoundingBox, Connectivity, LabelGrid};
pub use pipeline::{AffinitySource, SsaConfig, Stage};
pub use scalar::Scalar;
pub use ssm::{PositionNorm, SsmConfig};

pub type Tensor = tensor::Tensor<f32>;
pub type Cam = pipeline::Cam<f32>;
pub type ClassifierWeights = pipeline::ClassifierWeights<f32>;
pub type AffinityMatrix = ssm::AffinityMatrix<f32>;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Cam64 = pipeline::Cam<f64>;
pub type ClassifierWeights64 = pipeline::ClassifierWeights<f64>;
pub type AffinityMatrix64 = ssm::AffinityMatrix<f64>;
