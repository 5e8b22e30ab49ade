use candle_core::{DType, Device, Tensor};

use super::layers::{avg_pool, conv2d, conv_norm_relu, instance_norm, upsample_nearest, Padding};
use super::{check_channels, FeatureMap};
use crate::config::ModelConfig;
use crate::dataio::{crop_back, pad_to_multiple};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weights::Params;

/// Generator output together with the residual-stack activations.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    pub output: Tensor,
    pub bottleneck: FeatureMap,
}

/// Fuses a stage's input with its convolution output (and a skip connection
/// in the decoder).
///
/// The stage input is average-pooled when the convolution halved the
/// resolution and nearest-upsampled when it doubled it; the concatenation
/// `[resampled input, conv output, skip]` then goes through the block at `path`.
pub fn aggregation_forward(
    stage_input: &FeatureMap,
    conv_output: &FeatureMap,
    skip: Option<&FeatureMap>,
    params: &impl Params,
    path: &str,
) -> Result<FeatureMap> {
    let (ih, iw) = stage_input.spatial();
    let (oh, ow) = conv_output.spatial();
    let resampled = if oh * 2 == ih && ow * 2 == iw {
        avg_pool(stage_input.tensor(), 2)?
    } else if ih * 2 == oh && iw * 2 == ow {
        upsample_nearest(stage_input.tensor(), oh, ow)?
    } else {
        return Err(Error::shape(format!(
            "aggregation at `{path}`: stage input {ih}x{iw} and conv output {oh}x{ow} are not a factor of 2 apart"
        )));
    };
    let mut parts = vec![resampled, conv_output.tensor().clone()];
    if let Some(skip) = skip {
        if skip.spatial() != (oh, ow) {
            return Err(Error::shape(format!(
                "aggregation at `{path}`: skip is {:?}, conv output is {oh}x{ow}",
                skip.spatial()
            )));
        }
        parts.push(skip.tensor().clone());
    }
    let x = Tensor::cat(&parts, 1)?;
    FeatureMap::new(conv_norm_relu(&x, params, path, 1)?)
}

fn residual_block(x: &Tensor, params: &impl Params, path: &str) -> Result<Tensor> {
    let h = conv_norm_relu(x, params, &format!("{path}.conv1"), 1)?;
    let h = instance_norm(&conv2d(&h, params, &format!("{path}.conv2"), Padding::Reflect(1), 1)?)?;
    Ok((x + h)?)
}

/// Generator on a model-space `(N, C, H, W)` batch with `H` and `W` divisible by 4.
pub fn generator_forward_tensor(x: &Tensor, config: &ModelConfig, params: &impl Params) -> Result<GeneratorTrace> {
    let (_, c, h, w) = x.dims4()?;
    if c != config.input_channels {
        return Err(Error::shape(format!(
            "generator expects {} channel(s), got {c}",
            config.input_channels
        )));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(format!("generator input {h}x{w} is not a multiple of 4")));
    }
    let agg = config.use_aggregation;
    let input = FeatureMap::new(x.clone())?;

    // encoder
    let d1 = FeatureMap::new(conv_norm_relu(x, params, "generator.down1", 2)?)?;
    let e1 = if agg {
        aggregation_forward(&input, &d1, None, params, "generator.agg1")?
    } else {
        d1
    };
    let d2 = FeatureMap::new(conv_norm_relu(e1.tensor(), params, "generator.down2", 2)?)?;
    let e2 = if agg {
        aggregation_forward(&e1, &d2, None, params, "generator.agg2")?
    } else {
        d2
    };

    // bottleneck
    let adapt = config.residual_filters != config.encoder_filters[1];
    let mut b = if adapt {
        conv_norm_relu(e2.tensor(), params, "generator.adapt_in", 1)?
    } else {
        e2.tensor().clone()
    };
    for i in 0..config.residual_blocks {
        b = residual_block(&b, params, &format!("generator.res{i}"))?;
    }
    let bottleneck = FeatureMap::new(b.clone())?;
    let b = if adapt {
        conv_norm_relu(&b, params, "generator.adapt_out", 1)?
    } else {
        b
    };
    let b = FeatureMap::new(b)?;

    // decoder
    let u1 = upsample_nearest(b.tensor(), h / 2, w / 2)?;
    let u1 = FeatureMap::new(conv_norm_relu(&u1, params, "generator.up1", 1)?)?;
    let s1 = if agg {
        aggregation_forward(&b, &u1, Some(&e1), params, "generator.agg3")?
    } else {
        u1
    };
    let u2 = upsample_nearest(s1.tensor(), h, w)?;
    let u2 = FeatureMap::new(conv_norm_relu(&u2, params, "generator.up2", 1)?)?;
    let s2 = if agg {
        aggregation_forward(&s1, &u2, Some(&input), params, "generator.agg4")?
    } else {
        u2
    };
    let output = conv2d(s2.tensor(), params, "generator.out", Padding::Reflect(1), 1)?.tanh()?;
    Ok(GeneratorTrace { output, bottleneck })
}

/// Generator on one model-space image; pads to a multiple of 4 and crops back.
pub fn generator_forward(image: &ImageTensor, config: &ModelConfig, params: &impl Params) -> Result<ImageTensor> {
    check_channels(image, config)?;
    let (padded, record) = pad_to_multiple(image, 4);
    let x = padded.to_tensor(DType::F32, &Device::Cpu)?;
    let y = generator_forward_tensor(&x, config, params)?.output;
    crop_back(&ImageTensor::from_tensor(&y)?, &record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::weights::{init_weights, zero_weights, NetworkWeights};

    fn fm(n: usize, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(Tensor::randn(0f32, 1., (n, c, h, w), &Device::Cpu).unwrap()).unwrap()
    }

    fn agg_params(path: &str, cout: usize, cin: usize) -> NetworkWeights {
        let mut w = NetworkWeights::new();
        w.insert(
            format!("{path}.weight"),
            Tensor::randn(0f32, 0.02, (cout, cin, 3, 3), &Device::Cpu).unwrap(),
        )
        .unwrap();
        w.insert(format!("{path}.bias"), Tensor::zeros(cout, DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        w
    }

    #[test]
    fn encoder_aggregation_shape() {
        let p = agg_params("generator.agg", 32, 48);
        let out = aggregation_forward(&fm(1, 16, 128, 128), &fm(1, 32, 64, 64), None, &p, "generator.agg").unwrap();
        assert_eq!(out.tensor().dims(), &[1, 32, 64, 64]);
    }

    #[test]
    fn decoder_aggregation_shape() {
        let p = agg_params("generator.agg", 16, 64);
        let out = aggregation_forward(
            &fm(1, 32, 64, 64),
            &fm(1, 16, 128, 128),
            Some(&fm(1, 16, 128, 128)),
            &p,
            "generator.agg",
        )
        .unwrap();
        assert_eq!(out.tensor().dims(), &[1, 16, 128, 128]);
    }

    #[test]
    fn aggregation_rejects_mismatched_resolution() {
        let p = agg_params("generator.agg", 32, 48);
        let err = aggregation_forward(&fm(1, 16, 100, 100), &fm(1, 32, 51, 51), None, &p, "generator.agg");
        assert!(matches!(err, Err(Error::Shape(_))));
        let err = aggregation_forward(
            &fm(1, 32, 64, 64),
            &fm(1, 16, 128, 128),
            Some(&fm(1, 16, 64, 64)),
            &p,
            "generator.agg",
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn bottleneck_is_a_quarter_with_residual_filters() {
        let cfg = ModelConfig::default();
        let w = init_weights(&cfg, 0).unwrap();
        let x = Tensor::zeros((1, 3, 64, 96), DType::F32, &Device::Cpu).unwrap();
        let trace = generator_forward_tensor(&x, &cfg, &w).unwrap();
        assert_eq!(trace.bottleneck.tensor().dims(), &[1, 64, 16, 24]);
        assert_eq!(trace.output.dims(), &[1, 3, 64, 96]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for variant in Variant::ALL {
            let cfg = variant.apply(&ModelConfig::grayscale());
            let w = zero_weights(&cfg).unwrap();
            let img = ImageTensor::from_fn(20, 22, 1, |y, x, _| ((y * 7 + x) % 5) as f32 / 4.0 - 0.5).unwrap();
            let out = generator_forward(&img, &cfg, &w).unwrap();
            assert_eq!(out.shape(), (20, 22, 1));
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_residual_block_is_identity() {
        let cfg = ModelConfig {
            residual_blocks: 1,
            residual_filters: 8,
            ..ModelConfig::grayscale()
        };
        let w = zero_weights(&cfg).unwrap();
        let x = Tensor::randn(0f32, 1., (2, 8, 6, 6), &Device::Cpu).unwrap();
        let y = residual_block(&x, &w, "generator.res0").unwrap();
        let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let cfg = ModelConfig::default();
        let w = init_weights(&cfg, 0).unwrap();
        let img = ImageTensor::filled(16, 16, 1, 0.0).unwrap();
        assert!(matches!(generator_forward(&img, &cfg, &w), Err(Error::Shape(_))));
    }
}
