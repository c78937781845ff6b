//! Texture- and structure-aware image smoothing.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`imagecore`]: rasters, tensors, bilinear resampling, PNG and raw tensor I/O
//! - [`texgen`]: procedural training data (texture patterns blended onto
//!   structure-only images) with pixel-exact ground truth
//! - [`nnkernel`]: convolution, activation, resize and loss kernels with
//!   analytic backward passes, SGD with momentum, checkpoints, gradient checks
//! - [`models`]: the texture prediction (TPN), structure prediction (SPN) and
//!   filtering (TSAFN) networks, their training loops and the inference pipeline
//! - [`metrics`]: MSE, PSNR, SSIM and pixelwise AUC
//!
//! Batch-level loops run on rayon when the `parallel` feature is enabled (the
//! default). Reductions always happen in a fixed order, so results are
//! identical with and without the feature.

pub mod error;
pub mod gradsuite;
pub mod imagecore;
pub mod metrics;
pub mod models;
pub mod nnkernel;
pub mod par;
pub mod texgen;
pub mod toy;

pub use error::{Error, Result};
pub use imagecore::{Image, Tensor};
