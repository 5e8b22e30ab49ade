use candle_core::{DType, Device, Tensor};

use super::check_channels;
use super::layers::{avg_pool, conv2d, conv_norm_relu, resize_bilinear, Padding};
use crate::config::ModelConfig;
use crate::dataio::{crop_back, pad_to_multiple};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weights::Params;

/// Downsampling factors of the pyramid pooling branches.
pub const PYRAMID_FACTORS: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone)]
pub struct EnhancerTrace {
    pub output: Tensor,
    /// Pooled feature maps, one per entry of [`PYRAMID_FACTORS`].
    pub pyramid: Vec<Tensor>,
}

/// Enhancer on model-space batches whose sides are multiples of 32.
///
/// Returns `clamp(original + fuse(...), -1, 1)`.
pub fn enhancer_forward_tensor(
    generated: &Tensor,
    original: &Tensor,
    config: &ModelConfig,
    params: &impl Params,
) -> Result<EnhancerTrace> {
    if generated.dims() != original.dims() {
        return Err(Error::shape(format!(
            "enhancer inputs differ: generated {:?}, original {:?}",
            generated.dims(),
            original.dims()
        )));
    }
    let (_, c, h, w) = generated.dims4()?;
    if c != config.input_channels {
        return Err(Error::shape(format!(
            "enhancer expects {} channel(s), got {c}",
            config.input_channels
        )));
    }
    let x = Tensor::cat(&[generated, original], 1)?;
    let features = conv_norm_relu(&x, params, "enhancer.refine1", 1)?;
    let features = conv_norm_relu(&features, params, "enhancer.refine2", 1)?;

    let mut pyramid = Vec::with_capacity(PYRAMID_FACTORS.len());
    let mut branches = Vec::with_capacity(PYRAMID_FACTORS.len() + 1);
    for s in PYRAMID_FACTORS {
        let pooled = avg_pool(&features, s)?;
        let weighted = conv2d(&pooled, params, &format!("enhancer.pool{s}"), Padding::Zero(0), 1)?.relu()?;
        branches.push(resize_bilinear(&weighted, h, w)?);
        pyramid.push(pooled);
    }
    // raw inputs bypass instance norm so absolute intensity reaches the output
    branches.push(features);
    branches.push(x);
    let fused = Tensor::cat(&branches, 1)?;
    // The fuse conv predicts a correction to the affected input; clamping keeps
    // the result in [-1, 1]. Instance norm discards per-channel offsets, so an
    // absolute (tanh) output has to relearn the input from scratch.
    let correction = conv2d(&fused, params, "enhancer.fuse", Padding::Reflect(1), 1)?;
    let output = (original + correction)?.clamp(-1f32, 1f32)?;
    Ok(EnhancerTrace { output, pyramid })
}

/// Enhancer on one image pair in model space; pads both to a multiple of 32.
pub fn enhancer_forward(
    generated: &ImageTensor,
    original: &ImageTensor,
    config: &ModelConfig,
    params: &impl Params,
) -> Result<ImageTensor> {
    generated.ensure_same_shape(original, "enhancer inputs differ")?;
    check_channels(original, config)?;
    let (g, record) = pad_to_multiple(generated, 32);
    let (o, _) = pad_to_multiple(original, 32);
    let dev = Device::Cpu;
    let y = enhancer_forward_tensor(
        &g.to_tensor(DType::F32, &dev)?,
        &o.to_tensor(DType::F32, &dev)?,
        config,
        params,
    )?
    .output;
    crop_back(&ImageTensor::from_tensor(&y)?, &record)
}
