//! Attention cube regression for 3D joint estimation from multi-view depth images.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a tape-based reverse-mode autodiff graph.
//! * [`geometry`]: cameras, the attention cube and the cube regression arithmetic.
//! * [`model`]: backbone, cross-view fusion, weight distribution transformer.
//! * [`training`]: smooth-L1 loss, Adam, schedules, the training loop and checkpoints.
//! * [`data`]: synthetic two-camera depth corpus and preprocessing.
//! * [`metrics`]: mAP / MPJPE / PDJ and the postural workspace analytics.
//! * [`config`]: the experiment configuration file shared by every stage.

pub mod config;
pub mod data;
mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use geometry::{AttentionCube, CameraModel, CubeMode, JointEstimate, JointSet};
pub use model::{AcrModel, ModelConfig, ParamStore};
pub use tensor::{Graph, Tensor, Var};

/// On-disk format versions.
pub mod formats {
    pub use crate::data::MANIFEST_VERSION;
    pub use crate::tensor::io::TENSOR_FORMAT_VERSION;
    pub use crate::training::CHECKPOINT_VERSION;
}

