//! Generator, enhancer and patch discriminator as pure forward computations.
//!
//! Every forward pass reads parameters through [`Params`], so the same code
//! serves inference, training (gradients flow into [`NetworkWeights`]) and
//! frozen evaluation ([`crate::weights::Frozen`]).

pub mod discriminator;
pub mod enhancer;
pub mod generator;
pub mod layers;

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::dataio::{crop_back, pad_to_multiple};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::weights::{ParamKind, ParamSpec, Params};

pub use discriminator::{discriminator_forward, discriminator_forward_tensor};
pub use enhancer::{enhancer_forward, enhancer_forward_tensor, EnhancerTrace, PYRAMID_FACTORS};
pub use generator::{aggregation_forward, generator_forward, generator_forward_tensor, GeneratorTrace};

/// Intermediate activations, `(N, C, H, W)`.
#[derive(Debug, Clone)]
pub struct FeatureMap(pub Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        t.dims4()?;
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[3]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

/// Raw discriminator outputs, one per image patch, `(N, 1, H', W')`.
#[derive(Debug, Clone)]
pub struct PatchScores {
    pub scores: Tensor,
    pub receptive_field: usize,
}

impl PatchScores {
    pub fn new(scores: Tensor, receptive_field: usize) -> Self {
        Self {
            scores,
            receptive_field,
        }
    }

    /// Builds a single-image grid from host values.
    pub fn from_grid(rows: usize, cols: usize, values: Vec<f64>, receptive_field: usize) -> Result<Self> {
        let t = Tensor::from_vec(values, (1, 1, rows, cols), &Device::Cpu)?;
        Ok(Self::new(t, receptive_field))
    }

    /// `(rows, cols)` of the score grid.
    pub fn grid(&self) -> (usize, usize) {
        let d = self.scores.dims();
        (d[d.len() - 2], d[d.len() - 1])
    }

    pub fn cell_count(&self) -> usize {
        self.scores.elem_count()
    }
}

fn conv_spec(out: &mut Vec<ParamSpec>, path: String, cout: usize, cin: usize, k: usize) {
    out.push(ParamSpec {
        path: format!("{path}.weight"),
        shape: vec![cout, cin, k, k],
        kind: ParamKind::Weight,
    });
    out.push(ParamSpec {
        path: format!("{path}.bias"),
        shape: vec![cout],
        kind: ParamKind::Bias,
    });
}

/// Every trainable parameter implied by `config`, in a fixed order.
pub fn param_layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let c = config.input_channels;
    let (f0, f1) = (config.encoder_filters[0], config.encoder_filters[1]);
    let r = config.residual_filters;
    let g = |name: &str| format!("generator.{name}");

    conv_spec(&mut specs, g("down1"), f0, c, 3);
    if config.use_aggregation {
        conv_spec(&mut specs, g("agg1"), f0, c + f0, 3);
    }
    conv_spec(&mut specs, g("down2"), f1, f0, 3);
    if config.use_aggregation {
        conv_spec(&mut specs, g("agg2"), f1, f0 + f1, 3);
    }
    if r != f1 {
        conv_spec(&mut specs, g("adapt_in"), r, f1, 3);
    }
    for i in 0..config.residual_blocks {
        conv_spec(&mut specs, g(&format!("res{i}.conv1")), r, r, 3);
        conv_spec(&mut specs, g(&format!("res{i}.conv2")), r, r, 3);
    }
    if r != f1 {
        conv_spec(&mut specs, g("adapt_out"), f1, r, 3);
    }
    conv_spec(&mut specs, g("up1"), f0, f1, 3);
    if config.use_aggregation {
        conv_spec(&mut specs, g("agg3"), f0, f1 + f0 + f0, 3);
    }
    conv_spec(&mut specs, g("up2"), f0, f0, 3);
    if config.use_aggregation {
        conv_spec(&mut specs, g("agg4"), f0, f0 + f0 + c, 3);
    }
    conv_spec(&mut specs, g("out"), c, f0, 3);

    if config.use_enhancer {
        let w = config.enhancer_width;
        conv_spec(&mut specs, "enhancer.refine1".into(), w, 2 * c, 3);
        conv_spec(&mut specs, "enhancer.refine2".into(), w, w, 3);
        for s in PYRAMID_FACTORS {
            conv_spec(&mut specs, format!("enhancer.pool{s}"), 1, w, 1);
        }
        conv_spec(&mut specs, "enhancer.fuse".into(), c, w + PYRAMID_FACTORS.len() + 2 * c, 3);
    }

    let mut cin = c;
    for (i, (geo, width)) in config
        .discriminator_geometry()
        .iter()
        .zip(config.discriminator_widths())
        .enumerate()
    {
        conv_spec(&mut specs, format!("discriminator.layer{i}"), width, cin, geo.kernel);
        cin = width;
    }
    specs
}

/// Runs the generator and, when configured, the enhancer on a padded batch.
pub fn restore_tensor(x: &Tensor, config: &ModelConfig, params: &impl Params) -> Result<Tensor> {
    let generated = generator_forward_tensor(x, config, params)?.output;
    if config.use_enhancer {
        Ok(enhancer_forward_tensor(&generated, x, config, params)?.output)
    } else {
        Ok(generated)
    }
}

/// Full restoration of one model-space image: pad, G (+E), crop.
pub fn restore(image: &ImageTensor, config: &ModelConfig, params: &impl Params) -> Result<ImageTensor> {
    check_channels(image, config)?;
    let (padded, record) = pad_to_multiple(image, config.spatial_multiple());
    let x = padded.to_tensor(DType::F32, &Device::Cpu)?;
    let y = restore_tensor(&x, config, params)?;
    crop_back(&ImageTensor::from_tensor(&y)?, &record)
}

pub(crate) fn check_channels(image: &ImageTensor, config: &ModelConfig) -> Result<()> {
    if image.channels() != config.input_channels {
        return Err(Error::shape(format!(
            "model expects {} channel(s), image has {}",
            config.input_channels,
            image.channels()
        )));
    }
    Ok(())
}
