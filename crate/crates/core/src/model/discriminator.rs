use candle_core::{DType, Device, Tensor};

use super::layers::{conv2d, instance_norm, leaky_relu, Padding};
use super::{check_channels, FeatureMap, PatchScores};
use crate::config::{receptive_field, ModelConfig};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weights::Params;

/// Patch discriminator on a model-space batch.
///
/// Returns unbounded scores and the activations of every layer, shallow to
/// deep; the last feature map is the score grid itself.
pub fn discriminator_forward_tensor(
    x: &Tensor,
    config: &ModelConfig,
    params: &impl Params,
) -> Result<(PatchScores, Vec<FeatureMap>)> {
    let (_, c, h, w) = x.dims4()?;
    if c != config.input_channels {
        return Err(Error::shape(format!(
            "discriminator expects {} channel(s), got {c}",
            config.input_channels
        )));
    }
    let geometry = config.discriminator_geometry();
    let rf = receptive_field(&geometry);
    if h < rf || w < rf {
        return Err(Error::shape(format!(
            "{h}x{w} input is smaller than the {rf}px discriminator receptive field"
        )));
    }
    let last = geometry.len() - 1;
    let mut features = Vec::with_capacity(geometry.len());
    let mut h = x.clone();
    for (i, geo) in geometry.iter().enumerate() {
        let path = format!("discriminator.layer{i}");
        h = conv2d(&h, params, &path, Padding::Zero(geo.padding), geo.stride)?;
        if i != last {
            if i > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h)?;
        }
        features.push(FeatureMap::new(h.clone())?);
    }
    Ok((PatchScores::new(h, rf), features))
}

pub fn discriminator_forward(
    image: &ImageTensor,
    config: &ModelConfig,
    params: &impl Params,
) -> Result<(PatchScores, Vec<FeatureMap>)> {
    check_channels(image, config)?;
    discriminator_forward_tensor(&image.to_tensor(DType::F32, &Device::Cpu)?, config, params)
}
