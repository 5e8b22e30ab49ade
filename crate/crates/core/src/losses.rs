//! Training objectives.
//!
//! Every loss returns a rank-0 tensor so it can be differentiated directly.
//! Norms are averaged over elements (MAE / MSE) so loss magnitudes do not
//! depend on resolution.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMap, PatchScores};
use crate::perceptual::PerceptualExtractor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Number of discriminator layers compared by the feature-matching term.
    pub n_fm: usize,
    /// Extractor taps compared by the perceptual term, shallow to deep.
    pub perceptual_layers: Vec<String>,
    /// Coefficients of the adversarial, feature-matching, perceptual and fidelity terms.
    pub term_weights: [f64; 4],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            n_fm: 3,
            perceptual_layers: ["relu1_2", "relu2_2", "relu3_3"].map(String::from).to_vec(),
            term_weights: [1.0; 4],
        }
    }
}

impl LossConfig {
    pub fn n_vgg(&self) -> usize {
        self.perceptual_layers.len()
    }

    pub fn validate(&self, discriminator_layers: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_fm > discriminator_layers {
            problems.push(format!(
                "n_fm = {} exceeds the {discriminator_layers} discriminator layers",
                self.n_fm
            ));
        }
        if self.term_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            problems.push(format!(
                "term_weights {:?} must be finite and non-negative",
                self.term_weights
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// The four generator loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub gan: f64,
    pub fm: f64,
    pub vgg: f64,
    pub fid: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.gan, self.fm, self.vgg, self.fid]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

pub(crate) const TERM_NAMES: [&str; 4] = ["gan", "fm", "vgg", "fid"];

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn same_dims(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn mae(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `mean((1 - D(G(A)))²)` over all patch cells.
pub fn adversarial_g_loss(fake: &PatchScores) -> Result<Tensor> {
    if fake.cell_count() == 0 {
        return Err(Error::Domain("empty score grid".into()));
    }
    Ok((1.0 - &fake.scores)?.sqr()?.mean_all()?)
}

/// Least-squares discriminator objective: `½·mean((real − 1)²) + ½·mean(fake²)`.
pub fn discriminator_loss(real: &PatchScores, fake: &PatchScores) -> Result<Tensor> {
    same_dims(&real.scores, &fake.scores, "real and fake score grids differ")?;
    if real.cell_count() == 0 {
        return Err(Error::Domain("empty score grid".into()));
    }
    let r = (&real.scores - 1.0)?.sqr()?.mean_all()?;
    let f = fake.scores.sqr()?.mean_all()?;
    Ok(((r + f)? * 0.5)?)
}

/// Sum over layers of `MAE / 2^(n - i)` with `i = 1..=n`, so the deepest layer has weight 1.
fn pyramid_weighted_mae(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::shape(format!(
            "{} real vs {} fake feature maps",
            real.len(),
            fake.len()
        )));
    }
    let n = real.len();
    let mut total: Option<Tensor> = None;
    for (i, (r, f)) in real.iter().zip(fake).enumerate() {
        same_dims(r, f, &format!("feature layer {}", i + 1))?;
        let term = (mae(r, f)? / 2f64.powi((n - 1 - i) as i32))?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::shape("no feature layers to compare"))
}

/// Feature matching between discriminator activations on clean and generated images.
///
/// Both lists must hold exactly `n_fm` maps, ordered shallow to deep.
pub fn feature_matching_loss(real: &[FeatureMap], fake: &[FeatureMap], config: &LossConfig) -> Result<Tensor> {
    if real.len() != config.n_fm || fake.len() != config.n_fm {
        return Err(Error::shape(format!(
            "feature matching expects {} layers, got {} real and {} fake",
            config.n_fm,
            real.len(),
            fake.len()
        )));
    }
    let r: Vec<Tensor> = real.iter().map(|f| f.tensor().clone()).collect();
    let f: Vec<Tensor> = fake.iter().map(|f| f.tensor().clone()).collect();
    pyramid_weighted_mae(&r, &f)
}

/// Perceptual distance between clean and enhanced model-space batches.
pub fn perceptual_loss(
    clean: &Tensor,
    enhanced: &Tensor,
    extractor: &PerceptualExtractor,
    config: &LossConfig,
) -> Result<Tensor> {
    same_dims(clean, enhanced, "clean and enhanced differ")?;
    let taps = &config.perceptual_layers;
    let real = extractor.features(&clean.detach(), taps)?;
    let real: Vec<Tensor> = real.iter().map(Tensor::detach).collect();
    let fake = extractor.features(enhanced, taps)?;
    pyramid_weighted_mae(&real, &fake)
}

/// Mean squared pixel difference.
pub fn fidelity_loss(clean: &Tensor, enhanced: &Tensor) -> Result<Tensor> {
    same_dims(clean, enhanced, "clean and enhanced differ")?;
    Ok((clean - enhanced)?.sqr()?.mean_all()?)
}

fn check_finite(terms: &[f64; 4]) -> Result<()> {
    for (name, &v) in TERM_NAMES.iter().zip(terms) {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name, value: v });
        }
    }
    Ok(())
}

/// Weighted sum of the four components (a plain sum with default weights).
pub fn total_generator_loss(terms: &LossTerms, config: &LossConfig) -> Result<f64> {
    let values = terms.as_array();
    check_finite(&values)?;
    Ok(values.iter().zip(config.term_weights).map(|(v, w)| v * w).sum())
}

/// Differentiable counterpart of [`total_generator_loss`].
pub fn total_generator_loss_tensor(terms: [&Tensor; 4], config: &LossConfig) -> Result<Tensor> {
    let mut values = [0.0; 4];
    for (v, t) in values.iter_mut().zip(terms) {
        *v = scalar(t)?;
    }
    check_finite(&values)?;
    let mut total = (terms[0] * config.term_weights[0])?;
    for (t, w) in terms.iter().zip(config.term_weights).skip(1) {
        total = (total + (*t * w)?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn grid(v: f64) -> PatchScores {
        PatchScores::from_grid(3, 4, vec![v; 12], 14).unwrap()
    }

    fn fmap(v: f64, dims: (usize, usize, usize, usize)) -> FeatureMap {
        FeatureMap::new(Tensor::full(v, dims, &Device::Cpu).unwrap()).unwrap()
    }

    fn s(t: Result<Tensor>) -> f64 {
        scalar(&t.unwrap()).unwrap()
    }

    #[test]
    fn adversarial_values() {
        assert_eq!(s(adversarial_g_loss(&grid(1.0))), 0.0);
        assert_eq!(s(adversarial_g_loss(&grid(0.0))), 1.0);
        assert_eq!(s(adversarial_g_loss(&grid(0.5))), 0.25);
        let empty = PatchScores::new(Tensor::zeros((1, 1, 0, 0), DType::F64, &Device::Cpu).unwrap(), 14);
        assert!(matches!(adversarial_g_loss(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn discriminator_values() {
        assert_eq!(s(discriminator_loss(&grid(1.0), &grid(0.0))), 0.0);
        assert_eq!(s(discriminator_loss(&grid(0.0), &grid(1.0))), 1.0);
        assert_eq!(s(discriminator_loss(&grid(0.5), &grid(0.5))), 0.25);
        let other = PatchScores::from_grid(2, 2, vec![0.0; 4], 14).unwrap();
        assert!(matches!(discriminator_loss(&grid(0.0), &other), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_matching_weighting() {
        let cfg2 = LossConfig {
            n_fm: 2,
            ..Default::default()
        };
        let real = [fmap(0.0, (1, 2, 4, 4)), fmap(0.0, (1, 3, 2, 2))];
        let fake = [fmap(0.4, (1, 2, 4, 4)), fmap(0.2, (1, 3, 2, 2))];
        assert!((s(feature_matching_loss(&real, &fake, &cfg2)) - 0.4).abs() < 1e-12);
        assert_eq!(s(feature_matching_loss(&real, &real, &cfg2)), 0.0);

        let cfg1 = LossConfig {
            n_fm: 1,
            ..Default::default()
        };
        let v = s(feature_matching_loss(&[fmap(0.0, (1, 1, 2, 2))], &[fmap(0.7, (1, 1, 2, 2))], &cfg1));
        assert!((v - 0.7).abs() < 1e-12);
        assert!(matches!(
            feature_matching_loss(&real[..1], &fake[..1], &cfg2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn doubling_one_layer_adds_its_weighted_mae() {
        let cfg = LossConfig::default();
        let real = [fmap(0.0, (1, 1, 4, 4)), fmap(0.0, (1, 1, 2, 2)), fmap(0.0, (1, 1, 1, 1))];
        let base = [fmap(0.3, (1, 1, 4, 4)), fmap(0.5, (1, 1, 2, 2)), fmap(0.1, (1, 1, 1, 1))];
        let before = s(feature_matching_loss(&real, &base, &cfg));
        for (i, mae) in [0.3, 0.5, 0.1].into_iter().enumerate() {
            let mut doubled = base.clone();
            doubled[i] = fmap(2.0 * mae, doubled[i].tensor().dims4().unwrap());
            let after = s(feature_matching_loss(&real, &doubled, &cfg));
            let expected = mae / 2f64.powi(2 - i as i32);
            assert!((after - before - expected).abs() < 1e-12, "layer {i}");
        }
    }

    #[test]
    fn fidelity_values() {
        let zeros = Tensor::zeros((1, 1, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let ones = zeros.ones_like().unwrap();
        assert_eq!(s(fidelity_loss(&zeros, &zeros)), 0.0);
        assert_eq!(s(fidelity_loss(&zeros, &ones)), 1.0);
        assert_eq!(s(fidelity_loss(&zeros, &(ones * 0.5).unwrap())), 0.25);
    }

    #[test]
    fn total_loss_sums_and_masks() {
        let cfg = LossConfig::default();
        let t = LossTerms {
            gan: 0.25,
            fm: 0.4,
            vgg: 0.1,
            fid: 0.05,
        };
        assert!((total_generator_loss(&t, &cfg).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(total_generator_loss(&LossTerms::default(), &cfg).unwrap(), 0.0);
        let masked = LossConfig {
            term_weights: [1.0, 1.0, 0.0, 0.0],
            ..Default::default()
        };
        let t = LossTerms {
            gan: 0.3,
            fm: 0.2,
            vgg: 9.0,
            fid: 9.0,
        };
        assert!((total_generator_loss(&t, &masked).unwrap() - 0.5).abs() < 1e-12);
        let bad = LossTerms {
            vgg: f64::NAN,
            ..t
        };
        assert!(matches!(
            total_generator_loss(&bad, &cfg),
            Err(Error::NonFinite { term: "vgg", .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate(3).is_ok());
        assert!(LossConfig::default().validate(2).is_err());
        let neg = LossConfig {
            term_weights: [1.0, -1.0, 1.0, 1.0],
            ..Default::default()
        };
        assert!(neg.validate(3).is_err());
    }
}
