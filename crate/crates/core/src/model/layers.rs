//! Differentiable building blocks over `(N, C, H, W)` tensors.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::weights::Params;

pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn reflect_indices(before: usize, len: usize, after: usize, device: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (-(before as isize)..(len + after) as isize)
        .map(|i| reflect_index(i, len) as u32)
        .collect();
    Ok(Tensor::new(idx, device)?)
}

/// Reflection padding of the two spatial dimensions.
pub fn reflect_pad(x: &Tensor, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut out = x.clone();
    if top + bottom > 0 {
        out = out.index_select(&reflect_indices(top, h, bottom, x.device())?, 2)?;
    }
    if left + right > 0 {
        out = out.index_select(&reflect_indices(left, w, right, x.device())?, 3)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Reflect(usize),
    Zero(usize),
}

/// Convolution with the `<path>.weight` / `<path>.bias` pair.
pub fn conv2d(x: &Tensor, params: &impl Params, path: &str, padding: Padding, stride: usize) -> Result<Tensor> {
    let weight = params.tensor(&format!("{path}.weight"))?;
    let bias = params.tensor(&format!("{path}.bias"))?;
    let (_, cin, ..) = x.dims4()?;
    let (cout, wcin, ..) = weight.dims4()?;
    if cin != wcin {
        return Err(Error::shape(format!(
            "`{path}` expects {wcin} input channels, got {cin}"
        )));
    }
    let y = match padding {
        Padding::Reflect(p) => reflect_pad(x, p, p, p, p)?.conv2d(&weight, 0, stride, 1, 1)?,
        Padding::Zero(p) => x.conv2d(&weight, p, stride, 1, 1)?,
    };
    Ok(y.broadcast_add(&bias.reshape((1, cout, 1, 1))?)?)
}

/// Per-sample, per-channel normalization without affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

/// 3×3 reflection-padded convolution, instance norm, ReLU.
pub fn conv_norm_relu(x: &Tensor, params: &impl Params, path: &str, stride: usize) -> Result<Tensor> {
    Ok(instance_norm(&conv2d(x, params, path, Padding::Reflect(1), stride)?)?.relu()?)
}

pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "{h}x{w} is not divisible by the pooling factor {factor}"
        )));
    }
    Ok(x.avg_pool2d(factor)?)
}

pub fn upsample_nearest(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    Ok(x.upsample_nearest2d(height, width)?)
}

/// Half-pixel-centred linear interpolation weights, `(out, inp)`.
fn linear_weights(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[o * inp + i0] += 1.0 - frac;
        m[o * inp + i1] += frac;
    }
    m
}

/// Bilinear resize expressed as two matrix products so it stays differentiable.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let dev = x.device();
    let rows = Tensor::from_vec(linear_weights(height, h), (height, h), dev)?.to_dtype(x.dtype())?;
    let cols = Tensor::from_vec(linear_weights(width, w), (width, w), dev)?
        .to_dtype(x.dtype())?
        .t()?;
    let y = rows.broadcast_matmul(&x.contiguous()?)?;
    Ok(y.broadcast_matmul(&cols)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn instance_norm_zero_is_zero() {
        let x = Tensor::zeros((2, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let y = instance_norm(&x).unwrap();
        assert_eq!(y.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn bilinear_upsampling_of_constant_is_constant() {
        let x = Tensor::full(0.25f32, (1, 2, 4, 3), &Device::Cpu).unwrap();
        let y = resize_bilinear(&x, 16, 12).unwrap();
        assert_eq!(y.dims(), &[1, 2, 16, 12]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&a| (a - 0.25).abs() < 1e-6));
    }

    #[test]
    fn bilinear_weights_sum_to_one() {
        for (o, i) in [(8, 2), (64, 2), (3, 7), (5, 5)] {
            let m = linear_weights(o, i);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reflect_pad_shape() {
        let x = Tensor::arange(0f32, 16., &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let y = reflect_pad(&x, 1, 2, 0, 3).unwrap();
        assert_eq!(y.dims(), &[1, 1, 7, 7]);
        // first padded row mirrors row 1
        let row: Vec<f32> = y.get(0).unwrap().get(0).unwrap().get(0).unwrap().to_vec1().unwrap();
        assert_eq!(&row[..4], &[4.0, 5.0, 6.0, 7.0]);
    }
}
