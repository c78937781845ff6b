//! Differentiable kernels, losses, the optimizer and checkpoints.
//!
//! Every forward op has a hand-written backward. All kernels are generic
//! over [`Scalar`](crate::imagecore::Scalar) so the same code runs in `f32`
//! for training and in `f64` for gradient checks.

mod conv;
pub mod gradcheck;
mod ops;
mod params;

pub use conv::{conv2d_backward, conv2d_forward, conv2d_reference, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, max_relative_error, numeric_gradient};
pub use ops::{
    activation_backward, activation_forward, combined_finetune_loss, concat_channels, mse_loss,
    resize_bilinear_backward, resize_bilinear_layer, sigmoid, split_channels, weighted_bce_loss, Activation,
    LossWeights, BCE_EPS,
};
pub use params::{
    load_checkpoint, save_checkpoint, sgd_momentum_step, Init, ModelParams, Param, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Optimization settings shared by the training loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub finetune_learning_rate: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            finetune_learning_rate: 1e-5,
            patch_size: 64,
            batch_size: 16,
            steps: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.finetune_learning_rate >= 0.0) {
            return invalid("learning rates must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum {} must lie in [0,1)", self.momentum));
        }
        if self.patch_size == 0 || self.batch_size == 0 {
            return invalid("patch and batch sizes must be >= 1");
        }
        Ok(())
    }
}
