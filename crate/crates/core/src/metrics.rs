//! Full-reference image quality: SSIM and PSNR.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of pixel values.
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Normalized 1-D Gaussian taps.
fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM over valid window positions, averaged across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn check_pair(a: &ImageTensor, b: &ImageTensor, window: usize) -> Result<()> {
    a.ensure_same_shape(b, "metric inputs differ")?;
    if window == 0 || a.height() < window || a.width() < window {
        return Err(Error::Domain(format!(
            "{}x{} image is smaller than the {window}x{window} SSIM window",
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

pub fn ssim_map(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<SsimMap> {
    check_pair(a, b, p.window)?;
    let (h, w) = (a.height(), a.width());
    let k = gaussian_kernel(p.window, p.sigma);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let (oh, ow) = (h - p.window + 1, w - p.window + 1);
    let mut acc = vec![0.0; oh * ow];
    for c in 0..a.channels() {
        let x = a.plane(c);
        let y = b.plane(c);
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(s, t)| s * t).collect::<Vec<f64>>();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let mxx = filter_valid(&prod(&x, &x), h, w, &k);
        let myy = filter_valid(&prod(&y, &y), h, w, &k);
        let mxy = filter_valid(&prod(&x, &y), h, w, &k);
        for i in 0..acc.len() {
            // identical formulas for the auto and cross terms keep ssim(x, x) exactly 1
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cov = mxy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            acc[i] += num / den;
        }
    }
    let n = a.channels() as f64;
    Ok(SsimMap {
        height: oh,
        width: ow,
        data: acc.into_iter().map(|v| v / n).collect(),
    })
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5) over `[0, 1]` images.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<f64> {
    Ok(ssim_map(a, b, p)?.mean())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b, "metric inputs differ")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, max_value: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`,
/// which JSON cannot represent as numbers.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}

/// Arithmetic mean of the finite values and the number of infinite ones left out.
///
/// All-infinite input has mean `+∞`; empty input has mean NaN.
pub fn finite_mean(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    let mean = if finite.is_empty() {
        if values.is_empty() {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    (mean, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, c: usize, phase: f32) -> ImageTensor {
        ImageTensor::from_fn(h, w, c, |y, x, ch| {
            0.5 + 0.45 * ((x as f32 * 0.37 + phase + ch as f32).sin() * (y as f32 * 0.23).cos())
        })
        .unwrap()
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        for c in [1, 3] {
            let x = textured(23, 31, c, 0.3);
            assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn constant_images_match_closed_form() {
        let a = ImageTensor::filled(16, 16, 1, 0.2).unwrap();
        let b = ImageTensor::filled(16, 16, 1, 0.4).unwrap();
        // luminance term only; variances vanish
        let (a_, b_) = (0.2f32 as f64, 0.4f32 as f64);
        let expected = (2.0 * a_ * b_ + 1e-4) / (a_ * a_ + b_ * b_ + 1e-4);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!((got - 0.8001).abs() < 1e-3);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let a = textured(20, 20, 3, 0.0);
        let b = textured(20, 20, 3, 1.1);
        let ab = ssim(&a, &b).unwrap();
        assert_eq!(ab, ssim(&b, &a).unwrap());
        assert!((-1.0..1.0).contains(&ab));
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let a = ImageTensor::filled(10, 20, 1, 0.0).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::Domain(_))));
        let b = ImageTensor::filled(12, 12, 1, 0.0).unwrap();
        let c = ImageTensor::filled(12, 12, 3, 0.0).unwrap();
        assert!(matches!(ssim(&b, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn ssim_map_has_valid_extent() {
        let a = textured(20, 30, 1, 0.0);
        let m = ssim_map(&a, &a, &SsimParams::default()).unwrap();
        assert_eq!((m.height, m.width), (10, 20));
    }

    #[test]
    fn psnr_reference_values() {
        let zero = ImageTensor::filled(4, 4, 1, 0.0).unwrap();
        let max = ImageTensor::filled(4, 4, 1, 255.0).unwrap();
        assert_eq!(psnr(&zero, &max, 255.0).unwrap(), 0.0);
        let one = ImageTensor::filled(4, 4, 1, 1.0).unwrap();
        let expected = 20.0 * 255f64.log10();
        assert!((psnr(&zero, &one, 255.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 48.13).abs() < 0.01);
        assert_eq!(psnr(&one, &one, 1.0).unwrap(), f64::INFINITY);
    }
}
