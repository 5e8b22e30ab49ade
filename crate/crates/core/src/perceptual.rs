//! Frozen VGG-style feature extractor for the perceptual loss.
//!
//! Weights follow the torchvision `features.<index>.{weight,bias}` naming: a
//! stage is a run of 3×3 convolutions at indices two apart (conv, ReLU), and
//! a gap of three (conv, ReLU, max-pool) starts the next stage. Only the
//! layout is assumed, not the widths, so narrow extractors load the same way.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// ImageNet channel statistics the extractor expects.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Convolutions per stage in VGG16's first three stages.
pub const VGG16_STAGES: [usize; 3] = [2, 2, 3];

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    stages: Vec<Vec<ConvLayer>>,
}

impl PerceptualExtractor {
    /// Loads the leading stages from a safetensors file.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Resource(format!(
                "perceptual extractor weights not found at {}",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)
            .map_err(|e| Error::Resource(format!("{}: {e}", path.display())))?;
        Self::from_tensors(&tensors)
            .map_err(|e| Error::Resource(format!("{}: {e}", path.display())))
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>) -> Result<Self> {
        let mut convs: BTreeMap<usize, ConvLayer> = BTreeMap::new();
        for (name, t) in tensors {
            let Some(rest) = name.strip_prefix("features.") else {
                continue;
            };
            let Some((idx, field)) = rest.split_once('.') else {
                continue;
            };
            let Ok(idx) = idx.parse::<usize>() else {
                continue;
            };
            if field != "weight" {
                continue;
            }
            let bias = tensors
                .get(&format!("features.{idx}.bias"))
                .ok_or_else(|| Error::shape(format!("features.{idx}.bias is missing")))?;
            let t = t.to_dtype(DType::F32)?;
            let (o, _, kh, kw) = t.dims4()?;
            if (kh, kw) != (3, 3) || bias.dims() != [o] {
                return Err(Error::shape(format!("features.{idx} is not a 3x3 convolution")));
            }
            convs.insert(
                idx,
                ConvLayer {
                    weight: t,
                    bias: bias.to_dtype(DType::F32)?,
                },
            );
        }
        let mut stages: Vec<Vec<ConvLayer>> = Vec::new();
        let mut prev: Option<usize> = None;
        for (idx, layer) in convs {
            match prev {
                Some(p) if idx == p + 2 => stages.last_mut().expect("stage open").push(layer),
                Some(p) if idx == p + 3 => stages.push(vec![layer]),
                None if idx == 0 => stages.push(vec![layer]),
                _ => {
                    return Err(Error::shape(format!(
                        "features.{idx} does not follow the VGG layout"
                    )))
                }
            }
            prev = Some(idx);
        }
        if stages.is_empty() {
            return Err(Error::shape("no `features.*` convolutions found"));
        }
        let extractor = Self { stages };
        extractor.check_channels()?;
        Ok(extractor)
    }

    fn check_channels(&self) -> Result<()> {
        let mut cin = 3;
        for (s, stage) in self.stages.iter().enumerate() {
            for (k, l) in stage.iter().enumerate() {
                let (o, i, ..) = l.weight.dims4()?;
                if i != cin {
                    return Err(Error::shape(format!(
                        "relu{}_{} expects {i} input channels, previous layer gives {cin}",
                        s + 1,
                        k + 1
                    )));
                }
                cin = o;
            }
        }
        Ok(())
    }

    /// Seeded random extractor with the VGG layout and the given stage widths.
    ///
    /// Useful where pretrained weights cannot be shipped (tests, desk runs).
    pub fn random(widths: &[usize], convs_per_stage: &[usize], seed: u64) -> Result<Self> {
        if widths.len() != convs_per_stage.len() || widths.is_empty() {
            return Err(Error::config("one width per stage is required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for (&w, &n) in widths.iter().zip(convs_per_stage) {
            let mut stage = Vec::new();
            for _ in 0..n {
                // He-style scale keeps activations from collapsing across stages
                let std = (2.0 / (cin * 9) as f32).sqrt();
                let normal = Normal::new(0.0f32, std).expect("valid normal");
                let data: Vec<f32> = (0..w * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                let weight = Tensor::from_vec(data, (w, cin, 3, 3), &Device::Cpu)?;
                let bias = Tensor::zeros(w, DType::F32, &Device::Cpu)?;
                stage.push(ConvLayer { weight, bias });
                cin = w;
            }
            stages.push(stage);
        }
        Ok(Self { stages })
    }

    /// Tensors under torchvision names, the inverse of [`PerceptualExtractor::from_tensors`].
    pub fn to_tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        let mut idx = 0;
        for stage in &self.stages {
            for l in stage {
                out.insert(format!("features.{idx}.weight"), l.weight.clone());
                out.insert(format!("features.{idx}.bias"), l.bias.clone());
                idx += 2;
            }
            idx += 1;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.to_tensors(), path)?;
        Ok(())
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                s.iter()
                    .map(|l| {
                        Ok(ConvLayer {
                            weight: l.weight.to_dtype(dtype)?,
                            bias: l.bias.to_dtype(dtype)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages })
    }

    /// Tap names in network order, `relu<stage>_<conv>`.
    pub fn layer_names(&self) -> Vec<String> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(s, stage)| (0..stage.len()).map(move |k| format!("relu{}_{}", s + 1, k + 1)))
            .collect()
    }

    /// Activations at the named ReLU taps for a model-space batch.
    ///
    /// Grayscale input is replicated to three channels, mapped to `[0, 1]` and
    /// standardized with the ImageNet statistics before the first convolution.
    pub fn features(&self, x: &Tensor, taps: &[String]) -> Result<Vec<Tensor>> {
        let known = self.layer_names();
        for t in taps {
            if !known.contains(t) {
                return Err(Error::config(format!("extractor has no layer `{t}`")));
            }
        }
        let (_, c, ..) = x.dims4()?;
        let dtype = self.stages[0][0].weight.dtype();
        let x = x.to_dtype(dtype)?;
        let x = match c {
            3 => x,
            1 => Tensor::cat(&[&x, &x, &x], 1)?,
            c => return Err(Error::shape(format!("extractor takes 1 or 3 channels, got {c}"))),
        };
        let mean = Tensor::new(&IMAGENET_MEAN, x.device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, x.device())?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let mut h = ((x + 1.0)? * 0.5)?.broadcast_sub(&mean)?.broadcast_div(&std)?;

        let mut out = Vec::with_capacity(taps.len());
        'stages: for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                h = max_pool2(&h)?;
            }
            for (k, l) in stage.iter().enumerate() {
                let (o, ..) = l.weight.dims4()?;
                h = h
                    .conv2d(&l.weight, 1, 1, 1, 1)?
                    .broadcast_add(&l.bias.reshape((1, o, 1, 1))?)?
                    .relu()?;
                let name = format!("relu{}_{}", s + 1, k + 1);
                if taps.contains(&name) {
                    out.push(h.clone());
                    if out.len() == taps.len() {
                        break 'stages;
                    }
                }
            }
        }
        // restore the caller's order
        let names: Vec<String> = known.into_iter().filter(|n| taps.contains(n)).collect();
        Ok(taps
            .iter()
            .map(|t| out[names.iter().position(|n| n == t).expect("tap computed")].clone())
            .collect())
    }
}

/// 2×2/stride-2 max pooling that drops an odd trailing row or column.
///
/// Built from reshape + max because candle's `max_pool2d` backward pass
/// returns wrong gradients.
fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (h2, w2) = (h / 2, w / 2);
    let x = x.narrow(2, 0, 2 * h2)?.narrow(3, 0, 2 * w2)?;
    Ok(x.reshape((b, c, h2, 2, w2, 2))?.max(5)?.max(3)?)
}
