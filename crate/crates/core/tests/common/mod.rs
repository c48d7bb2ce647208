#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stseg_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct seven-loop cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: (usize, usize),
    pad: [usize; 4],
    dil: (usize, usize),
) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let ho = (h + pad[0] + pad[1] - dil.0 * (kh - 1) - 1) / stride.0 + 1;
    let wo = (wd + pad[2] + pad[3] - dil.1 * (kw - 1) - 1) / stride.1 + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride.0 + ky * dil.0) as isize - pad[0] as isize;
                                let ix = (xo * stride.1 + kx * dil.1) as isize - pad[2] as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * o + oi) * ho + y) * wo + xo] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, o, ho, wo], out).unwrap()
}

/// Scatter-accumulate transposed convolution, weight `[C, O, Kh, Kw]`.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: (usize, usize)) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [_, o, kh, kw] = w.shape().try_into().unwrap();
    let (ho, wo) = ((h - 1) * stride.0 + kh, (wd - 1) * stride.1 + kw);
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            let bias = b.map_or(0.0, |b| b.data()[oi]);
            out[(ni * o + oi) * ho * wo..(ni * o + oi + 1) * ho * wo].iter_mut().for_each(|v| *v = bias);
        }
        for ci in 0..c {
            for y in 0..h {
                for xi in 0..wd {
                    let v = x.data()[((ni * c + ci) * h + y) * wd + xi];
                    for oi in 0..o {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (oy, ox) = (y * stride.0 + ky, xi * stride.1 + kx);
                                out[((ni * o + oi) * ho + oy) * wo + ox] += v * w.data()[((ci * o + oi) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, o, ho, wo], out).unwrap()
}

/// 2×2 / stride-2 window max.
pub fn naive_maxpool(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let mut out = Vec::with_capacity(n * c * h * w / 4);
    for p in 0..n * c {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let at = |dy: usize, dx: usize| x.data()[(p * h + 2 * y + dy) * w + 2 * xo + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    Tensor::new(&[n, c, h / 2, w / 2], out).unwrap()
}
