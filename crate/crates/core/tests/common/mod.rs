#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use lenswipe::dataio::{ImagePair, Source};
use lenswipe::perceptual::{PerceptualExtractor, VGG16_STAGES};
use lenswipe::synth::{composite_raindrops, procedural_scene, RainConfig};
use lenswipe::Result;

/// Mild rain scaled for small test frames.
pub fn toy_rain() -> RainConfig {
    RainConfig {
        drops_per_image: (3, 6),
        radius_range: (2.0, 6.0),
        ..RainConfig::default()
    }
}

/// Every drop brightened: a visible, learnable corruption for transfer runs.
pub fn bright_rain() -> RainConfig {
    RainConfig {
        drops_per_image: (3, 6),
        radius_range: (3.0, 7.0),
        brightness_probability: 1.0,
        brightness_range: (1.3, 1.6),
        ..RainConfig::default()
    }
}

/// `n` synthetic pairs of `size × size` procedural scenes.
pub fn toy_pairs(n: usize, size: usize, channels: usize, seed: u64) -> Vec<ImagePair> {
    pairs_with(&toy_rain(), n, size, channels, seed)
}

pub fn pairs_with(rain: &RainConfig, n: usize, size: usize, channels: usize, seed: u64) -> Vec<ImagePair> {
    (0..n as u64)
        .map(|i| {
            let clean = procedural_scene(size, size, channels, seed.wrapping_mul(1000) + i);
            let (rainy, _) = composite_raindrops(&clean, &rain.with_seed(seed ^ (i << 16))).unwrap();
            ImagePair::new(rainy, clean, format!("toy{seed}_{i}"), Source::Synthetic).unwrap()
        })
        .collect()
}

pub fn small_extractor() -> PerceptualExtractor {
    PerceptualExtractor::random(&[8, 16, 32], &VGG16_STAGES, 0).unwrap()
}

pub fn randn64(shape: &[usize], seed: u64) -> Tensor {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

/// Relative L2 discrepancy between the autograd gradient of `f` at `x0` and
/// central finite differences, together with the gradient norm.
pub fn gradient_check(x0: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor>) -> (f64, f64) {
    assert_eq!(x0.dtype(), DType::F64);
    let var = Var::from_tensor(x0).unwrap();
    let loss = f(var.as_tensor()).unwrap();
    let grads = loss.backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(var.as_tensor())
        .expect("input receives a gradient")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let base: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
    let eval = |v: Vec<f64>| -> f64 {
        let t = Tensor::from_vec(v, x0.dims(), &Device::Cpu).unwrap();
        f(&t).unwrap().to_scalar::<f64>().unwrap()
    };
    let eps = 1e-6;
    let numeric: Vec<f64> = (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += eps;
            minus[i] -= eps;
            (eval(plus) - eval(minus)) / (2.0 * eps)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
    (norm(&diff) / scale, norm(&analytic))
}
