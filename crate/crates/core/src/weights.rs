//! Named trainable parameters and their on-disk archive.
//!
//! Parameters live in candle [`Var`]s keyed by dotted paths whose first segment
//! names the owning network (`generator.`, `enhancer.`, `discriminator.`).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "model.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Generator,
    Enhancer,
    Discriminator,
}

impl Component {
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Generator => "generator",
            Component::Enhancer => "enhancer",
            Component::Discriminator => "discriminator",
        }
    }

    pub fn of_path(path: &str) -> Option<Component> {
        let head = path.split('.').next()?;
        [Self::Generator, Self::Enhancer, Self::Discriminator]
            .into_iter()
            .find(|c| c.prefix() == head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One entry of a network's parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Read access to parameters by path, used by every forward pass.
pub trait Params {
    fn tensor(&self, path: &str) -> Result<Tensor>;
}

#[derive(Debug, Clone, Default)]
pub struct NetworkWeights {
    params: BTreeMap<String, Var>,
}

impl Params for NetworkWeights {
    fn tensor(&self, path: &str) -> Result<Tensor> {
        self.params
            .get(path)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| Error::shape(format!("missing parameter `{path}`")))
    }
}

/// Parameter view whose tensors are cut from the autograd graph.
pub struct Frozen<'a>(pub &'a NetworkWeights);

impl Params for Frozen<'_> {
    fn tensor(&self, path: &str) -> Result<Tensor> {
        Ok(self.0.tensor(path)?.detach())
    }
}

impl NetworkWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<()> {
        let path = path.into();
        if Component::of_path(&path).is_none() {
            return Err(Error::config(format!(
                "parameter path `{path}` does not start with a component name"
            )));
        }
        self.params.insert(path, Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Var> {
        self.params.get(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries belonging to any of `components`, sharing storage with `self`.
    pub fn subset(&self, components: &[Component]) -> NetworkWeights {
        let params = self
            .params
            .iter()
            .filter(|(k, _)| Component::of_path(k).is_some_and(|c| components.contains(&c)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        NetworkWeights { params }
    }

    /// Copies every tensor into fresh storage.
    pub fn deep_clone(&self) -> Result<NetworkWeights> {
        let mut params = BTreeMap::new();
        for (k, v) in &self.params {
            params.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        Ok(NetworkWeights { params })
    }

    /// Flattened host copy of each parameter, for exact comparisons.
    pub fn to_host(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.params
            .iter()
            .map(|(k, v)| {
                let data = v
                    .as_tensor()
                    .to_dtype(DType::F32)?
                    .flatten_all()?
                    .to_vec1::<f32>()?;
                Ok((k.clone(), data))
            })
            .collect()
    }

    /// Checks that every parameter of `config`'s layout is present with the expected shape.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        for spec in model::param_layout(config) {
            match self.params.get(&spec.path) {
                None => return Err(Error::shape(format!("missing parameter `{}`", spec.path))),
                Some(v) if v.dims() != spec.shape.as_slice() => {
                    return Err(Error::shape(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        spec.path,
                        v.dims(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Resource(format!("{} does not exist", path.display())));
        }
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut weights = NetworkWeights::new();
        for (k, t) in map {
            weights.insert(k, t)?;
        }
        Ok(weights)
    }

    pub fn manifest(&self) -> WeightsManifest {
        let parameters = self
            .params
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    TensorEntry {
                        shape: v.dims().to_vec(),
                        dtype: format!("{:?}", v.dtype()).to_lowercase(),
                    },
                )
            })
            .collect();
        WeightsManifest {
            parameter_count: count_parameters(self),
            parameters,
        }
    }

    /// Writes the tensor archive, its manifest and the model configuration into `dir`.
    pub fn save_dir(&self, dir: &Path, config: &ModelConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.save(&dir.join(WEIGHTS_FILE))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| Error::Serde(e.to_string()))?;
        write_file(&dir.join(MANIFEST_FILE), &manifest)?;
        write_file(&dir.join(CONFIG_FILE), &config.to_toml())
    }

    /// Loads an archive written by [`NetworkWeights::save_dir`] and validates it against its configuration.
    pub fn load_dir(dir: &Path) -> Result<(Self, ModelConfig)> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = ModelConfig::from_toml(&text)?;
        let weights = Self::load(&dir.join(WEIGHTS_FILE))?;
        weights.check_layout(&config)?;
        Ok((weights, config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub parameter_count: usize,
    pub parameters: BTreeMap<String, TensorEntry>,
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Draws every weight i.i.d. from `Normal(0, 0.02)` and zeroes biases.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<NetworkWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid normal");
    let mut weights = NetworkWeights::new();
    for spec in model::param_layout(config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = match spec.kind {
            ParamKind::Weight => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            ParamKind::Bias => vec![0.0; n],
        };
        let t = Tensor::from_vec(data, spec.shape.as_slice(), &Device::Cpu)?;
        weights.insert(spec.path, t)?;
    }
    Ok(weights)
}

/// All-zero parameters for `config`.
pub fn zero_weights(config: &ModelConfig) -> Result<NetworkWeights> {
    config.validate()?;
    let mut weights = NetworkWeights::new();
    for spec in model::param_layout(config) {
        weights.insert(spec.path, Tensor::zeros(spec.shape.as_slice(), DType::F32, &Device::Cpu)?)?;
    }
    Ok(weights)
}

/// Number of scalar trainable parameters.
pub fn count_parameters(weights: &NetworkWeights) -> usize {
    weights.iter().map(|(_, v)| v.elem_count()).sum()
}
