//! Run configuration: a TOML file merged with command-line overrides.
//!
//! The resolved value is written to `<out>/run_config.toml` before any work
//! starts; passing that file back through `--config` reruns the command.

use std::fs;
use std::path::{Path, PathBuf};

use lenswipe::dataio::{DatasetManifest, PairingRule};
use lenswipe::losses::LossConfig;
use lenswipe::synth::RainConfig;
use lenswipe::train::TrainConfig;
use lenswipe::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that produced this snapshot; informational.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// When set, overrides `train.seed` and `rain.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub device: String,
    /// Starting weights for training (a checkpoint or weights directory).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    /// Weights used by infer, evaluate and benchmark.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Variant label (G, G+E, G+E+A) applied on top of `model`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub data: DataSection,
    pub perceptual: PerceptualSection,
    pub infer: InferSection,
    pub benchmark: BenchmarkSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub rain: RainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: None,
            out: None,
            device: "cpu".into(),
            init: None,
            checkpoint: None,
            variant: None,
            data: DataSection::default(),
            perceptual: PerceptualSection::default(),
            infer: InferSection::default(),
            benchmark: BenchmarkSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            rain: RainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Paired corpus: a directory or a TOML dataset manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Clean images for synthetic pre-training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean_dir: Option<PathBuf>,
    /// Clean images to corrupt with `synthesize`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dir: Option<PathBuf>,
    /// Pairing used when `path` is a directory.
    pub pairing: PairingRule,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    /// Seed of the split permutation, independent of the training seed.
    pub split_seed: u64,
    /// Which split `evaluate` scores: train, val, test or all.
    pub eval_split: String,
    /// Score metrics on the luma channel.
    pub luma: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            clean_dir: None,
            input_dir: None,
            pairing: PairingRule::default(),
            split: [0.9, 0.1, 0.0],
            split_seed: 0,
            eval_split: "all".into(),
            luma: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualSection {
    /// VGG16 `features.N.weight` safetensors; required for training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    /// Image files or directories to restore.
    pub inputs: Vec<PathBuf>,
    pub suffix: String,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            suffix: "_restored".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub height: usize,
    pub width: usize,
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            height: 480,
            width: 720,
            runs: 100,
            warmup: 5,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Propagates the top-level seed and variant and checks every section.
    pub fn resolve(&mut self) -> Result<()> {
        if self.device != "cpu" {
            return Err(Error::Config(format!(
                "device: `{}` is not available, this build only supports `cpu`",
                self.device
            )));
        }
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.rain.seed = seed;
        }
        if let Some(label) = &self.variant {
            self.model = lenswipe::Variant::parse(label)?.apply(&self.model);
        }
        if !matches!(self.data.eval_split.as_str(), "train" | "val" | "test" | "all") {
            return Err(Error::Config(format!(
                "data.eval_split: `{}` is not one of train, val, test, all",
                self.data.eval_split
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate(self.model.discriminator_layers)?;
        self.rain.validate()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let command = self.command.as_deref().unwrap_or("run");
            PathBuf::from("runs").join(format!("{command}-{}", self.seed.unwrap_or(self.train.seed)))
        })
    }

    /// The paired corpus named by `data.path`.
    pub fn manifest(&self) -> Result<DatasetManifest> {
        let path = required(&self.data.path, "data.path")?;
        if path.is_file() {
            let manifest = DatasetManifest::from_file(path)?;
            if manifest.channels != self.model.input_channels {
                return Err(Error::Config(format!(
                    "data.path: manifest declares {} channel(s) but model.input_channels is {}",
                    manifest.channels, self.model.input_channels
                )));
            }
            Ok(manifest)
        } else if path.is_dir() {
            Ok(DatasetManifest::new(path, self.data.pairing.clone(), self.model.input_channels))
        } else {
            Err(Error::Config(format!("data.path: {} does not exist", path.display())))
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// A mandatory path-valued setting; the error names the field.
pub fn required<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{field} is required (set it in the config file or pass the flag)")))
}
