//! Browser demo: synthetic raindrops, SSIM/PSNR comparison and the enhancer's
//! pooling pyramid, all on RGBA canvas buffers.
//!
//! The functions here are plain Rust so they can be tested natively; the
//! `wasm` module re-exports them through `wasm-bindgen` on wasm32 only.

use lenswipe::metrics::{psnr, ssim_map, SsimParams};
use lenswipe::model::PYRAMID_FACTORS;
use lenswipe::synth::RainConfig;
use lenswipe::{ImageTensor, Result};

/// RGBA8 bytes → `[0, 1]` RGB; alpha is ignored.
pub fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<ImageTensor> {
    if rgba.len() != width * height * 4 {
        return Err(lenswipe::Error::Shape(format!(
            "{} bytes is not a {width}x{height} RGBA buffer",
            rgba.len()
        )));
    }
    let data = rgba
        .chunks_exact(4)
        .flat_map(|p| [p[0], p[1], p[2]])
        .map(|v| v as f32 / 255.0)
        .collect();
    ImageTensor::new(height, width, 3, data)
}

/// `[0, 1]` image (1 or 3 channels) → opaque RGBA8.
pub fn to_rgba(img: &ImageTensor) -> Vec<u8> {
    let rgb = img.to_rgb();
    rgb.data()
        .chunks_exact(3)
        .flat_map(|p| {
            let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [q(p[0]), q(p[1]), q(p[2]), 255]
        })
        .collect()
}

/// Composites `[1, max_drops]` random drops; returns the rainy image followed
/// by the mask, both RGBA, concatenated.
pub fn add_raindrops(rgba: &[u8], width: usize, height: usize, seed: u64, max_drops: usize) -> Result<Vec<u8>> {
    let clean = from_rgba(rgba, width, height)?;
    // drop sizes follow the frame so small canvases are not swamped
    let scale = width.min(height) as f64 / 480.0;
    let config = RainConfig {
        drops_per_image: (1, max_drops.max(1)),
        radius_range: ((4.0 * scale).max(1.5), (24.0 * scale).max(3.0)),
        seed,
        ..RainConfig::default()
    };
    let (rainy, mask) = lenswipe::synth::composite_raindrops(&clean, &config)?;
    let mut out = to_rgba(&rainy);
    out.extend(to_rgba(&mask.to_image()));
    Ok(out)
}

/// Mean SSIM and PSNR (dB, `inf` for identical inputs) of two RGBA buffers.
pub fn compare(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<[f64; 2]> {
    let (a, b) = (from_rgba(a, width, height)?, from_rgba(b, width, height)?);
    let map = ssim_map(&a, &b, &SsimParams::default())?;
    Ok([map.mean(), psnr(&a, &b, 1.0)?])
}

/// Local SSIM as a grayscale RGBA image of the valid-window size
/// (`width - 10` × `height - 10`); dark means dissimilar.
pub fn ssim_heatmap(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    let (a, b) = (from_rgba(a, width, height)?, from_rgba(b, width, height)?);
    let map = ssim_map(&a, &b, &SsimParams::default())?;
    let data = map.data.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(to_rgba(&ImageTensor::new(map.height, map.width, 1, data)?))
}

/// Block-averages by `factor` (one of the pyramid factors) and scales back up
/// with nearest neighbour, showing what one pyramid branch sees.
pub fn pyramid_view(rgba: &[u8], width: usize, height: usize, factor: usize) -> Result<Vec<u8>> {
    if !PYRAMID_FACTORS.contains(&factor) {
        return Err(lenswipe::Error::Config(format!(
            "factor {factor} is not one of {PYRAMID_FACTORS:?}"
        )));
    }
    let img = from_rgba(rgba, width, height)?;
    let (bh, bw) = (height.div_ceil(factor), width.div_ceil(factor));
    let mut sums = vec![0.0f64; bh * bw * 3];
    let mut counts = vec![0u32; bh * bw];
    for y in 0..height {
        for x in 0..width {
            let b = (y / factor) * bw + x / factor;
            counts[b] += 1;
            for c in 0..3 {
                sums[b * 3 + c] += img.get(y, x, c) as f64;
            }
        }
    }
    let out = ImageTensor::from_fn(height, width, 3, |y, x, c| {
        let b = (y / factor) * bw + x / factor;
        (sums[b * 3 + c] / counts[b] as f64) as f32
    })?;
    Ok(to_rgba(&out))
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    fn js(e: lenswipe::Error) -> JsError {
        JsError::new(&e.to_string())
    }

    #[wasm_bindgen(js_name = addRaindrops)]
    pub fn add_raindrops(rgba: &[u8], width: usize, height: usize, seed: u64, max_drops: usize) -> Result<Vec<u8>, JsError> {
        super::add_raindrops(rgba, width, height, seed, max_drops).map_err(js)
    }

    #[wasm_bindgen]
    pub fn compare(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<f64>, JsError> {
        super::compare(a, b, width, height).map(|v| v.to_vec()).map_err(js)
    }

    #[wasm_bindgen(js_name = ssimHeatmap)]
    pub fn ssim_heatmap(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
        super::ssim_heatmap(a, b, width, height).map_err(js)
    }

    #[wasm_bindgen(js_name = pyramidView)]
    pub fn pyramid_view(rgba: &[u8], width: usize, height: usize, factor: usize) -> Result<Vec<u8>, JsError> {
        super::pyramid_view(rgba, width, height, factor).map_err(js)
    }
}
