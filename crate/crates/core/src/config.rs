use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture hyperparameters for generator, enhancer and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Filter counts of the two downsampling stages.
    pub encoder_filters: Vec<usize>,
    pub residual_blocks: usize,
    pub residual_filters: usize,
    pub use_aggregation: bool,
    pub use_enhancer: bool,
    pub enhancer_width: usize,
    pub discriminator_layers: usize,
    /// Width of the first discriminator layer; each further strided layer doubles it.
    pub discriminator_filters: usize,
    pub patch_receptive_field: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            encoder_filters: vec![16, 32],
            residual_blocks: 9,
            residual_filters: 64,
            use_aggregation: true,
            use_enhancer: true,
            enhancer_width: 32,
            discriminator_layers: 3,
            discriminator_filters: 64,
            patch_receptive_field: 14,
        }
    }
}

/// The three architecture variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "G")]
    Generator,
    #[serde(rename = "G+E")]
    GeneratorEnhancer,
    #[serde(rename = "G+E+A")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Generator, Variant::GeneratorEnhancer, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Generator => "G",
            Variant::GeneratorEnhancer => "G+E",
            Variant::Full => "G+E+A",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown variant `{s}` (expected G, G+E or G+E+A)")))
    }

    /// Returns `base` with the enhancer/aggregation switches set for this variant.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (use_enhancer, use_aggregation) = match self {
            Variant::Generator => (false, false),
            Variant::GeneratorEnhancer => (true, false),
            Variant::Full => (true, true),
        };
        ModelConfig {
            use_enhancer,
            use_aggregation,
            ..base.clone()
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Kernel, stride and padding of one discriminator convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Receptive field of a plain convolution stack, computed back to front:
/// `rf = (rf - 1) * stride + kernel`.
pub fn receptive_field(layers: &[ConvGeometry]) -> usize {
    layers
        .iter()
        .rev()
        .fold(1, |rf, l| (rf - 1) * l.stride + l.kernel)
}

/// Spatial output size of a convolution stack, or `None` if the input is too small.
pub fn conv_output_size(input: usize, layers: &[ConvGeometry]) -> Option<usize> {
    layers.iter().try_fold(input, |size, l| {
        let padded = size + 2 * l.padding;
        (padded >= l.kernel).then(|| (padded - l.kernel) / l.stride + 1)
    })
}

impl ModelConfig {
    pub fn grayscale() -> Self {
        Self {
            input_channels: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_channels != 1 && self.input_channels != 3 {
            problems.push(format!("input_channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.encoder_filters.len() != 2 {
            problems.push(format!(
                "encoder_filters needs exactly 2 entries, got {}",
                self.encoder_filters.len()
            ));
        }
        if self.encoder_filters.contains(&0) {
            problems.push("encoder_filters entries must be positive".into());
        }
        if self.residual_filters == 0 {
            problems.push("residual_filters must be positive".into());
        }
        if self.enhancer_width == 0 {
            problems.push("enhancer_width must be positive".into());
        }
        if self.discriminator_filters == 0 {
            problems.push("discriminator_filters must be positive".into());
        }
        if self.discriminator_layers == 0 {
            problems.push("discriminator_layers must be positive".into());
        } else {
            let rf = receptive_field(&self.discriminator_geometry());
            if rf != self.patch_receptive_field {
                problems.push(format!(
                    "{} discriminator layers give a receptive field of {rf}, not {}",
                    self.discriminator_layers, self.patch_receptive_field
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Strided 4×4 layers followed by a final unpadded 2×2 stride-1 scoring layer.
    pub fn discriminator_geometry(&self) -> Vec<ConvGeometry> {
        let n = self.discriminator_layers.max(1);
        let mut layers = vec![
            ConvGeometry {
                kernel: 4,
                stride: 2,
                padding: 1,
            };
            n - 1
        ];
        layers.push(ConvGeometry {
            kernel: 2,
            stride: 1,
            padding: 0,
        });
        layers
    }

    /// Output channel count of each discriminator layer.
    pub fn discriminator_widths(&self) -> Vec<usize> {
        let n = self.discriminator_layers;
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    1
                } else {
                    self.discriminator_filters << i
                }
            })
            .collect()
    }

    /// Spatial multiple the restoration path needs.
    pub fn spatial_multiple(&self) -> usize {
        if self.use_enhancer {
            32
        } else {
            4
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| &v.apply(self) == self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Short stable hash of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_toml().as_bytes())
    }

    /// Names of the fields whose values differ between `self` and `other`.
    pub fn differing_fields(&self, other: &Self) -> Vec<String> {
        let a = toml::Table::try_from(self).expect("model config serializes");
        let b = toml::Table::try_from(other).expect("model config serializes");
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

pub(crate) fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
