//! Real-time mitigation of lens-adherent raindrops and similar camera anomalies.
//!
//! A shallow generator with aggregation blocks restores the affected image, an
//! enhancer with pyramid pooling refines it against the original input, and a
//! patch discriminator drives adversarial training. Around the networks sit a
//! synthetic out-of-focus raindrop compositor for pre-training, paired-corpus
//! loading, the training loop with early stopping, and SSIM / PSNR / latency
//! evaluation.

pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod perceptual;
pub mod synth;
pub mod train;
pub mod weights;

pub use config::{ModelConfig, Variant};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use weights::{count_parameters, init_weights, Component, NetworkWeights};
