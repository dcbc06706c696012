//! Single-image dehazing at desk scale: a haze-formation simulator, small
//! convolutional networks with hand-written backward passes, the loss stack
//! that trains them, and an MSE/PSNR/SSIM evaluation harness.
//!
//! Everything is deterministic: identical seeds and configs produce
//! bit-identical datasets, training logs, and checkpoints.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod haze;
pub mod loss;
pub mod net;
pub mod ssim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
