//! Three-stream encoder-decoder.
//!
//! Image, LiDAR and relative-depth inputs each run through their own
//! stride-2 convolution encoder. The decoder is image-centric: at each of
//! its three levels the upsampled image-stream feature is concatenated with
//! bilinearly upsampled LiDAR and depth features of matching resolution and
//! mixed by a 1×1 convolution. Every encoder also feeds an auxiliary head so
//! each modality is trained to segment road on its own, and the training
//! objective is `L_fine + α·L_image + β·L_lidar + γ·L_depth`.

mod inputs;
mod loss;
mod network;
mod params;
pub(crate) mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff_engine::DiffError;
use crate::kitti_io::KittiError;
use crate::lidar_adaptation::AdaptError;

pub use inputs::{prepare_frame, prepare_inputs, ModelInputs, PreparedFrame};
pub use loss::{masked_total_loss, total_loss, LossTerms};
pub use network::{forward, predict, ModelOutputs, Predictions};
pub use params::{BoundParams, LayerSpec, ModelConfig, ModelParams};
pub use train::{
    train_steps, train_supervised, training_step, write_loss_csv, LossRecord, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input resolution {height}x{width} is not divisible by 8")]
    NonDivisibleResolution { height: usize, width: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("frame `{0}` has no ground truth")]
    MissingGroundTruth(String),
    #[error("frame `{0}` has no road pixel in its ground truth")]
    UnusableGroundTruth(String),
    #[error("checkpoint does not match the architecture: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Coefficients of the auxiliary terms in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.4,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ModelError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}
