//! Forward kernels shared by evaluation and training.

use rayon::prelude::*;

use crate::tensor::{sgemm, Tensor};

use super::{BatchNorm, ChannelAffine, Conv2d, Dense, LayerNorm};

/// `[N, C, spatial...]` → (N, C, spatial size)
pub(crate) fn channel_layout(x: &Tensor) -> (usize, usize, usize) {
    let n = x.dim(0);
    let c = x.dim(1);
    let s = x.shape()[2..].iter().product();
    (n, c, s)
}

pub(crate) fn dense_forward(layer: &Dense, x: &Tensor) -> Tensor {
    let n = x.dim(0);
    let (out, inp) = (layer.weight.dim(0), layer.weight.dim(1));
    let mut y = Tensor::zeros(&[n, out]);
    if let Some(b) = &layer.bias {
        for row in y.data_mut().chunks_exact_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if layer.bias.is_some() { 1.0 } else { 0.0 };
    sgemm(
        n,
        inp,
        out,
        1.0,
        x.data(),
        (inp, 1),
        layer.weight.data(),
        (1, inp),
        beta,
        y.data_mut(),
        (out, 1),
    );
    y
}

pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(layer: &Conv2d, x_shape: &[usize]) -> Self {
        let (c, h, w) = (x_shape[1], x_shape[2], x_shape[3]);
        let (k, stride, pad) = (layer.kernel, layer.stride, layer.padding);
        ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one sample `[C, H, W]` into `[C·k·k, Ho·Wo]`.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let ncols = g.col_cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, H, W]`.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let ncols = g.col_cols();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[(ci * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(layer: &Conv2d, x: &Tensor) -> Tensor {
    let n = x.dim(0);
    let g = ConvGeom::new(layer, x.shape());
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let o = layer.out_channels;
    let mut y = Tensor::zeros(&[n, o, g.ho, g.wo]);
    let in_len = g.c * g.h * g.w;
    let beta = if layer.bias.is_some() { 1.0 } else { 0.0 };
    y.data_mut()
        .par_chunks_mut(o * ncols)
        .zip(x.data().par_chunks(in_len))
        .for_each_init(
            || vec![0.0f32; rows * ncols],
            |cols, (yi, xi)| {
                im2col(xi, &g, cols);
                if let Some(b) = &layer.bias {
                    for (oc, chunk) in yi.chunks_exact_mut(ncols).enumerate() {
                        chunk.fill(b.data()[oc]);
                    }
                }
                sgemm(
                    o,
                    rows,
                    ncols,
                    1.0,
                    layer.weight.data(),
                    (rows, 1),
                    cols,
                    (ncols, 1),
                    beta,
                    yi,
                    (ncols, 1),
                );
            },
        );
    y
}

pub(crate) fn relu(x: &mut Tensor) {
    x.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Returns the pooled tensor and the flat input index of every maximum.
pub(crate) fn maxpool_forward(x: &Tensor, kernel: usize, stride: usize) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let ho = (h - kernel) / stride + 1;
    let wo = (w - kernel) / stride + 1;
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let xd = x.data();
    let yd = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                yd[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (y, arg)
}

/// Per-channel mean and biased variance over batch and spatial positions,
/// accumulated in double precision.
pub(crate) fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, s) = channel_layout(x);
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    let xd = x.data();
    for ch in 0..c {
        let mut sum = 0.0f64;
        for i in 0..n {
            let off = (i * c + ch) * s;
            sum += xd[off..off + s].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = sum / (n * s) as f64;
        let mut sq = 0.0f64;
        for i in 0..n {
            let off = (i * c + ch) * s;
            sq += xd[off..off + s]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / (n * s) as f64;
    }
    (mean, var)
}

/// Applies `y = x * scale[c] + shift[c]` in place.
pub(crate) fn scale_shift(x: &mut Tensor, scale: &[f32], shift: &[f32]) {
    let (n, c, s) = channel_layout(x);
    let xd = x.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * s;
            let (a, b) = (scale[ch], shift[ch]);
            for v in &mut xd[off..off + s] {
                *v = *v * a + b;
            }
        }
    }
}

pub(crate) fn batchnorm_eval(bn: &BatchNorm, x: &mut Tensor) {
    let (scale, shift) = bn_eval_affine(bn);
    scale_shift(x, &scale, &shift);
}

/// The per-channel affine map an eval-mode batchnorm reduces to.
pub(crate) fn bn_eval_affine(bn: &BatchNorm) -> (Vec<f32>, Vec<f32>) {
    let c = bn.running_mean.len();
    let mut scale = vec![0.0f32; c];
    let mut shift = vec![0.0f32; c];
    for ch in 0..c {
        let inv = 1.0 / ((bn.running_var.data()[ch] as f64 + bn.eps as f64).sqrt());
        let g = bn.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
        let b = bn.bias.as_ref().map_or(0.0, |w| w.data()[ch] as f64);
        scale[ch] = (g * inv) as f32;
        shift[ch] = (b - bn.running_mean.data()[ch] as f64 * g * inv) as f32;
    }
    (scale, shift)
}

/// Train-mode batchnorm: normalizes with batch statistics. Returns the batch
/// mean and biased variance.
pub(crate) fn batchnorm_train(bn: &BatchNorm, x: &mut Tensor) -> (Vec<f64>, Vec<f64>) {
    let (mean, var) = channel_moments(x);
    let c = mean.len();
    let mut scale = vec![0.0f32; c];
    let mut shift = vec![0.0f32; c];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + bn.eps as f64).sqrt();
        let g = bn.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
        let b = bn.bias.as_ref().map_or(0.0, |w| w.data()[ch] as f64);
        scale[ch] = (g * inv) as f32;
        shift[ch] = (b - mean[ch] * g * inv) as f32;
    }
    scale_shift(x, &scale, &shift);
    (mean, var)
}

/// Normalizes each sample over all features, then applies the per-channel
/// affine. Returns per-sample `(mean, inv_std)`.
pub(crate) fn layernorm_forward(ln: &LayerNorm, x: &mut Tensor) -> Vec<(f64, f64)> {
    let n = x.dim(0);
    let len = x.row_len();
    let c = x.dim(1);
    let s = len / c;
    let mut stats = Vec::with_capacity(n);
    for row in x.data_mut().chunks_exact_mut(len) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / len as f64;
        let inv = 1.0 / (var + ln.eps as f64).sqrt();
        for (ch, chunk) in row.chunks_exact_mut(s).enumerate() {
            let g = ln.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
            let b = ln.bias.as_ref().map_or(0.0, |w| w.data()[ch] as f64);
            for v in chunk {
                *v = (((*v as f64) - mean) * inv * g + b) as f32;
            }
        }
        stats.push((mean, inv));
    }
    stats
}

pub(crate) fn affine_forward(a: &ChannelAffine, x: &mut Tensor) {
    scale_shift(x, a.scale.data(), a.shift.data());
}
