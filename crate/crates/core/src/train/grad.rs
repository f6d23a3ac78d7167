//! Reverse-mode gradients for every layer kind.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::ops::{self, channel_layout, col2im, im2col, ConvGeom};
use crate::nn::{BatchNorm, Conv2d, Dense, Layer, LayerNorm, Mode, ModelGraph, ParamRole};
use crate::tensor::{sgemm, Tensor};

/// Samples per conv gradient partial; fixed so the reduction order never
/// depends on the thread count.
const CONV_CHUNK: usize = 8;

/// Gradients aligned with [`ModelGraph::params`]; running statistics have none.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn tensors(&self) -> &[Option<Tensor>] {
        &self.grads
    }

    pub fn get(&self, i: usize) -> Option<&Tensor> {
        self.grads.get(i).and_then(Option::as_ref)
    }

    pub fn sum_sq(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_sq).sum()
    }
}

enum Cache {
    Dense { x: Tensor },
    Conv { x: Tensor },
    Relu { y: Tensor },
    Pool { arg: Vec<u32>, in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    BatchNorm { xhat: Tensor, inv: Vec<f64>, batch: bool },
    LayerNorm { xhat: Tensor, inv: Vec<f64> },
    Affine { x: Tensor },
}

pub(crate) struct Tape {
    caches: Vec<Cache>,
    /// Train-mode batchnorm statistics per layer: (mean, biased var, element count).
    pub bn_batch: Vec<Option<(Vec<f64>, Vec<f64>, usize)>>,
    /// Channel (mean, biased var) of the outputs of the recorded layers.
    pub recorded: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

pub(crate) fn forward_tape(model: &ModelGraph, x: &Tensor, mode: Mode, record: &[usize]) -> Result<(Tensor, Tape)> {
    model.check_input(x)?;
    let mut tape = Tape {
        caches: Vec::with_capacity(model.layers().len()),
        bn_batch: vec![None; model.layers().len()],
        recorded: Vec::new(),
    };
    let mut cur = x.clone();
    for (i, layer) in model.layers().iter().enumerate() {
        let (y, cache) = match layer {
            Layer::Dense(d) => (ops::dense_forward(d, &cur), Cache::Dense { x: cur }),
            Layer::Conv2d(c) => (ops::conv_forward(c, &cur), Cache::Conv { x: cur }),
            Layer::Relu => {
                ops::relu(&mut cur);
                (cur.clone(), Cache::Relu { y: cur })
            }
            Layer::MaxPool2d { kernel, stride } => {
                let (y, arg) = ops::maxpool_forward(&cur, *kernel, *stride);
                let in_shape = cur.shape().to_vec();
                (y, Cache::Pool { arg, in_shape })
            }
            Layer::Flatten => {
                let in_shape = cur.shape().to_vec();
                let (n, f) = (cur.dim(0), cur.row_len());
                (cur.reshape(&[n, f])?, Cache::Flatten { in_shape })
            }
            Layer::BatchNorm(bn) => {
                let (y, xhat, inv, stats) = bn_forward(bn, cur, mode);
                tape.bn_batch[i] = stats;
                (
                    y,
                    Cache::BatchNorm {
                        xhat,
                        inv,
                        batch: mode == Mode::Train,
                    },
                )
            }
            Layer::LayerNorm(ln) => {
                let (y, xhat, inv) = ln_forward(ln, cur);
                (y, Cache::LayerNorm { xhat, inv })
            }
            Layer::ChannelAffine(a) => {
                let mut y = cur.clone();
                ops::affine_forward(a, &mut y);
                (y, Cache::Affine { x: cur })
            }
        };
        if !y.all_finite() {
            return Err(Error::Overflow {
                layer: i,
                kind: layer.kind(),
            });
        }
        if record.contains(&i) {
            let (m, v) = ops::channel_moments(&y);
            tape.recorded.push((i, m, v));
        }
        tape.caches.push(cache);
        cur = y;
    }
    Ok((cur, tape))
}

type BnOut = (Tensor, Tensor, Vec<f64>, Option<(Vec<f64>, Vec<f64>, usize)>);

fn bn_forward(bn: &BatchNorm, x: Tensor, mode: Mode) -> BnOut {
    let (n, c, s) = channel_layout(&x);
    let (mean, inv, stats) = match mode {
        Mode::Train => {
            let (m, v) = ops::channel_moments(&x);
            let inv: Vec<f64> = v.iter().map(|&v| 1.0 / (v + bn.eps as f64).sqrt()).collect();
            (m.clone(), inv, Some((m, v, n * s)))
        }
        Mode::Eval => (
            bn.running_mean.data().iter().map(|&m| m as f64).collect(),
            bn.running_var
                .data()
                .iter()
                .map(|&v| 1.0 / (v as f64 + bn.eps as f64).sqrt())
                .collect(),
            None,
        ),
    };
    let mut xhat = x;
    let mut y = Tensor::zeros(xhat.shape());
    let (xd, yd) = (xhat.data_mut(), y.data_mut());
    for i in 0..n {
        for ch in 0..c {
            let g = bn.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
            let b = bn.bias.as_ref().map_or(0.0, |w| w.data()[ch] as f64);
            let off = (i * c + ch) * s;
            for j in off..off + s {
                let h = (xd[j] as f64 - mean[ch]) * inv[ch];
                xd[j] = h as f32;
                yd[j] = (h * g + b) as f32;
            }
        }
    }
    (y, xhat, inv, stats)
}

fn ln_forward(ln: &LayerNorm, x: Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let mut xhat = x;
    let c = xhat.dim(1);
    let len = xhat.row_len();
    let s = len / c;
    let mut y = Tensor::zeros(xhat.shape());
    let mut invs = Vec::with_capacity(xhat.dim(0));
    for (row, yrow) in xhat.data_mut().chunks_exact_mut(len).zip(y.data_mut().chunks_exact_mut(len)) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / len as f64;
        let inv = 1.0 / (var + ln.eps as f64).sqrt();
        for (j, (h, o)) in row.iter_mut().zip(yrow.iter_mut()).enumerate() {
            let ch = j / s;
            let g = ln.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
            let b = ln.bias.as_ref().map_or(0.0, |w| w.data()[ch] as f64);
            let v = (*h as f64 - mean) * inv;
            *h = v as f32;
            *o = (v * g + b) as f32;
        }
        invs.push(inv);
    }
    (y, xhat, invs)
}

/// Mean softmax cross-entropy. Returns (loss, dloss/dlogits, correct count).
pub(crate) fn softmax_xent(logits: &Tensor, labels: &[usize]) -> (f64, Tensor, usize) {
    let n = logits.dim(0);
    let k = logits.dim(1);
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    let mut correct = 0;
    for ((row, g), &y) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        loss += z.ln() + max - row[y] as f64;
        if argmax(row) == y {
            correct += 1;
        }
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - max).exp() / z;
            *gj = ((p - if j == y { 1.0 } else { 0.0 }) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad, correct)
}

/// First index of the maximum.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn backward(model: &ModelGraph, tape: Tape, dlogits: Tensor) -> Gradients {
    let mut per_layer: Vec<Vec<(ParamRole, Tensor)>> = vec![Vec::new(); model.layers().len()];
    let mut dy = dlogits;
    for (i, (layer, cache)) in model.layers().iter().zip(tape.caches).enumerate().rev() {
        let need_dx = i > 0;
        dy = match (layer, cache) {
            (Layer::Dense(d), Cache::Dense { x }) => {
                let (dx, grads) = dense_backward(d, &x, &dy, need_dx);
                per_layer[i] = grads;
                dx
            }
            (Layer::Conv2d(c), Cache::Conv { x }) => {
                let (dx, grads) = conv_backward(c, &x, &dy, need_dx);
                per_layer[i] = grads;
                dx
            }
            (Layer::Relu, Cache::Relu { y }) => {
                for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                dy
            }
            (Layer::MaxPool2d { .. }, Cache::Pool { arg, in_shape }) => {
                let mut dx = Tensor::zeros(&in_shape);
                let dxd = dx.data_mut();
                for (&a, &g) in arg.iter().zip(dy.data()) {
                    dxd[a as usize] += g;
                }
                dx
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => dy.reshape(&in_shape).expect("same element count"),
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv, batch }) => {
                let (dx, grads) = bn_backward(bn, &xhat, &inv, batch, dy);
                per_layer[i] = grads;
                dx
            }
            (Layer::LayerNorm(ln), Cache::LayerNorm { xhat, inv }) => {
                let (dx, grads) = ln_backward(ln, &xhat, &inv, dy);
                per_layer[i] = grads;
                dx
            }
            (Layer::ChannelAffine(a), Cache::Affine { x }) => {
                let (n, c, s) = channel_layout(&x);
                let mut ds = vec![0.0f64; c];
                let mut dm = vec![0.0f64; c];
                let sc = a.scale.data();
                for smp in 0..n {
                    for ch in 0..c {
                        let off = (smp * c + ch) * s;
                        for j in off..off + s {
                            let g = dy.data()[j];
                            ds[ch] += g as f64 * x.data()[j] as f64;
                            dm[ch] += g as f64;
                            dy.data_mut()[j] = g * sc[ch];
                        }
                    }
                }
                per_layer[i] = vec![
                    (ParamRole::AffineScale, to_tensor(&ds)),
                    (ParamRole::AffineShift, to_tensor(&dm)),
                ];
                dy
            }
            _ => unreachable!("tape built from this model"),
        };
    }
    let grads = model
        .params()
        .iter()
        .map(|(layer, role, _)| {
            per_layer[*layer]
                .iter()
                .position(|(r, _)| r == role)
                .map(|k| per_layer[*layer][k].1.clone())
        })
        .collect();
    Gradients { grads }
}

fn to_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(&[v.len()], v.iter().map(|&x| x as f32).collect()).expect("1-d")
}

fn dense_backward(d: &Dense, x: &Tensor, dy: &Tensor, need_dx: bool) -> (Tensor, Vec<(ParamRole, Tensor)>) {
    let n = x.dim(0);
    let (out, inp) = (d.weight.dim(0), d.weight.dim(1));
    let mut dw = Tensor::zeros(&[out, inp]);
    sgemm(out, n, inp, 1.0, dy.data(), (1, out), x.data(), (inp, 1), 0.0, dw.data_mut(), (inp, 1));
    let mut grads = vec![(ParamRole::Weight, dw)];
    if d.bias.is_some() {
        let mut db = vec![0.0f64; out];
        for row in dy.data().chunks_exact(out) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g as f64;
            }
        }
        grads.push((ParamRole::Bias, to_tensor(&db)));
    }
    let mut dx = Tensor::zeros(x.shape());
    if need_dx {
        sgemm(n, out, inp, 1.0, dy.data(), (out, 1), d.weight.data(), (inp, 1), 0.0, dx.data_mut(), (inp, 1));
    }
    (dx, grads)
}

fn conv_backward(c: &Conv2d, x: &Tensor, dy: &Tensor, need_dx: bool) -> (Tensor, Vec<(ParamRole, Tensor)>) {
    let g = ConvGeom::new(c, x.shape());
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let o = c.out_channels;
    let in_len = g.c * g.h * g.w;
    let out_len = o * ncols;
    let w = c.weight.data();
    let mut dx = Tensor::zeros(x.shape());
    let parts: Vec<(Vec<f32>, Vec<f64>)> = dx
        .data_mut()
        .par_chunks_mut(CONV_CHUNK * in_len)
        .zip(x.data().par_chunks(CONV_CHUNK * in_len))
        .zip(dy.data().par_chunks(CONV_CHUNK * out_len))
        .map(|((dxc, xc), dyc)| {
            let mut dw = vec![0.0f32; o * rows];
            let mut db = vec![0.0f64; o];
            let mut cols = vec![0.0f32; rows * ncols];
            let mut dcols = vec![0.0f32; rows * ncols];
            for ((dxi, xi), dyi) in dxc
                .chunks_exact_mut(in_len)
                .zip(xc.chunks_exact(in_len))
                .zip(dyc.chunks_exact(out_len))
            {
                im2col(xi, &g, &mut cols);
                sgemm(o, ncols, rows, 1.0, dyi, (ncols, 1), &cols, (1, ncols), 1.0, &mut dw, (rows, 1));
                for (b, chunk) in db.iter_mut().zip(dyi.chunks_exact(ncols)) {
                    *b += chunk.iter().map(|&v| v as f64).sum::<f64>();
                }
                if need_dx {
                    sgemm(rows, o, ncols, 1.0, w, (1, rows), dyi, (ncols, 1), 0.0, &mut dcols, (ncols, 1));
                    col2im(&dcols, &g, dxi);
                }
            }
            (dw, db)
        })
        .collect();
    let mut dw = vec![0.0f32; o * rows];
    let mut db = vec![0.0f64; o];
    for (pw, pb) in parts {
        for (a, b) in dw.iter_mut().zip(pw) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(pb) {
            *a += b;
        }
    }
    let mut grads = vec![(ParamRole::Weight, Tensor::from_vec(c.weight.shape(), dw).expect("weight shape"))];
    if c.bias.is_some() {
        grads.push((ParamRole::Bias, to_tensor(&db)));
    }
    (dx, grads)
}

fn bn_backward(bn: &BatchNorm, xhat: &Tensor, inv: &[f64], batch: bool, mut dy: Tensor) -> (Tensor, Vec<(ParamRole, Tensor)>) {
    let (n, c, s) = channel_layout(xhat);
    let mut sdy = vec![0.0f64; c];
    let mut sdyx = vec![0.0f64; c];
    let (xd, dd) = (xhat.data(), dy.data());
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * s;
            for j in off..off + s {
                sdy[ch] += dd[j] as f64;
                sdyx[ch] += dd[j] as f64 * xd[j] as f64;
            }
        }
    }
    let m = (n * s) as f64;
    let dyd = dy.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let gamma = bn.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
            let k = gamma * inv[ch];
            let off = (i * c + ch) * s;
            for j in off..off + s {
                let g = dyd[j] as f64;
                dyd[j] = if batch {
                    (k / m * (m * g - sdy[ch] - xd[j] as f64 * sdyx[ch])) as f32
                } else {
                    (k * g) as f32
                };
            }
        }
    }
    let mut grads = Vec::new();
    if bn.weight.is_some() {
        grads.push((ParamRole::NormScale, to_tensor(&sdyx)));
    }
    if bn.bias.is_some() {
        grads.push((ParamRole::NormShift, to_tensor(&sdy)));
    }
    (dy, grads)
}

fn ln_backward(ln: &LayerNorm, xhat: &Tensor, inv: &[f64], mut dy: Tensor) -> (Tensor, Vec<(ParamRole, Tensor)>) {
    let c = xhat.dim(1);
    let len = xhat.row_len();
    let s = len / c;
    let mut dg = vec![0.0f64; c];
    let mut db = vec![0.0f64; c];
    let l = len as f64;
    for ((drow, xrow), &inv) in dy.data_mut().chunks_exact_mut(len).zip(xhat.data().chunks_exact(len)).zip(inv) {
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        for (j, (&g, &h)) in drow.iter().zip(xrow).enumerate() {
            let ch = j / s;
            let gamma = ln.weight.as_ref().map_or(1.0, |w| w.data()[ch] as f64);
            dg[ch] += g as f64 * h as f64;
            db[ch] += g as f64;
            let dh = g as f64 * gamma;
            a += dh;
            b += dh * h as f64;
        }
        for (j, (g, &h)) in drow.iter_mut().zip(xrow).enumerate() {
            let gamma = ln.weight.as_ref().map_or(1.0, |w| w.data()[j / s] as f64);
            let dh = *g as f64 * gamma;
            *g = (inv / l * (l * dh - a - h as f64 * b)) as f32;
        }
    }
    let mut grads = Vec::new();
    if ln.weight.is_some() {
        grads.push((ParamRole::NormScale, to_tensor(&dg)));
    }
    if ln.bias.is_some() {
        grads.push((ParamRole::NormShift, to_tensor(&db)));
    }
    (dy, grads)
}

/// Loss and parameter gradients of the mean cross-entropy on one batch.
pub fn gradients(model: &ModelGraph, x: &Tensor, labels: &[usize], mode: Mode) -> Result<(f64, Gradients)> {
    let (logits, tape) = forward_tape(model, x, mode, &[])?;
    let (loss, dlogits, _) = softmax_xent(&logits, labels);
    Ok((loss, backward(model, tape, dlogits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ChannelAffine, Conv2d, Dense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randomize(model: &mut ModelGraph, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, role, t) in model.params_mut() {
            for v in t.data_mut() {
                *v = match role {
                    ParamRole::RunningVar | ParamRole::NormScale | ParamRole::AffineScale => rng.random_range(0.5..1.5),
                    _ => rng.random_range(-0.6..0.6),
                };
            }
        }
    }

    fn loss(model: &ModelGraph, x: &Tensor, y: &[usize], mode: Mode) -> f64 {
        let (logits, _) = forward_tape(model, x, mode, &[]).unwrap();
        softmax_xent(&logits, y).0
    }

    /// Central differences on every learnable entry; tensor-wise relative
    /// error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 0.1)` must stay within 1e-3. The floor
    /// covers gradients that vanish identically (a bias feeding batchnorm).
    fn check(model: &ModelGraph, x: &Tensor, y: &[usize], mode: Mode) -> Vec<String> {
        let (_, grads) = gradients(model, x, y, mode).unwrap();
        let h = 1e-3f32;
        let mut kinds = Vec::new();
        for (k, (layer, role, t)) in model.params().iter().enumerate() {
            if role.is_running_stat() {
                assert!(grads.get(k).is_none());
                continue;
            }
            let g = grads.get(k).expect("gradient present");
            let mut num = vec![0.0f64; t.len()];
            for (j, nj) in num.iter_mut().enumerate() {
                let mut plus = model.clone();
                plus.params_mut()[k].2.data_mut()[j] += h;
                let mut minus = model.clone();
                minus.params_mut()[k].2.data_mut()[j] -= h;
                *nj = (loss(&plus, x, y, mode) - loss(&minus, x, y, mode)) / (2.0 * h as f64);
            }
            let diff: f64 = num.iter().zip(g.data()).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>().sqrt();
            let na = num.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb = g.sum_sq().sqrt();
            let rel = diff / na.max(nb).max(0.1);
            assert!(rel <= 1e-3, "layer {layer} {} rel err {rel:e} (|g| {nb:e})", role.name());
            kinds.push(model.layers()[*layer].kind().to_string());
        }
        kinds
    }

    fn input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_batchnorm_pool_layernorm_train_mode() {
        use crate::nn::LayerDesc as D;
        let descs = vec![
            D::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1, bias: true },
            D::BatchNorm { channels: 3, affine: true, momentum: 0.1, eps: 1e-5 },
            D::Relu,
            D::MaxPool2d { kernel: 2, stride: None },
            D::Flatten,
            D::Dense { in_features: 12, out_features: 5, bias: true },
            D::LayerNorm { normalized_shape: vec![5], affine: true, eps: 1e-5 },
            D::Relu,
            D::Dense { in_features: 5, out_features: 3, bias: true },
        ];
        let mut m = ModelGraph::build(&crate::nn::ArchDescriptor { input_shape: vec![2, 4, 4], layers: descs }).unwrap();
        randomize(&mut m, 1);
        let x = input(&[4, 2, 4, 4], 2);
        let kinds = check(&m, &x, &[0, 2, 1, 2], Mode::Train);
        for k in ["conv2d", "batchnorm", "dense", "layernorm"] {
            assert!(kinds.iter().any(|s| s == k), "{k} not checked: {kinds:?}");
        }
    }

    #[test]
    fn strided_conv_eval_batchnorm_affine_no_bias() {
        let layers = vec![
            Layer::Conv2d(Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 2,
                stride: 2,
                padding: 0,
                weight: Tensor::zeros(&[2, 1, 2, 2]),
                bias: None,
            }),
            Layer::BatchNorm(crate::nn::BatchNorm {
                weight: Some(Tensor::zeros(&[2])),
                bias: Some(Tensor::zeros(&[2])),
                running_mean: Tensor::zeros(&[2]),
                running_var: Tensor::full(&[2], 1.0),
                momentum: 0.1,
                eps: 1e-5,
            }),
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense(Dense {
                weight: Tensor::zeros(&[3, 8]),
                bias: None,
            }),
            Layer::ChannelAffine(ChannelAffine {
                scale: Tensor::full(&[3], 1.0),
                shift: Tensor::zeros(&[3]),
            }),
            Layer::Relu,
            Layer::Dense(Dense {
                weight: Tensor::zeros(&[2, 3]),
                bias: Some(Tensor::zeros(&[2])),
            }),
        ];
        let mut m = ModelGraph::from_layers(vec![1, 4, 4], layers).unwrap();
        randomize(&mut m, 3);
        let x = input(&[3, 1, 4, 4], 4);
        let kinds = check(&m, &x, &[1, 0, 1], Mode::Eval);
        assert!(kinds.iter().any(|s| s == "channel_affine"));
    }

    #[test]
    fn conv_padding_and_stride_variants() {
        use crate::nn::LayerDesc as D;
        for (stride, padding) in [(1, 1), (1, 0), (2, 0), (2, 1)] {
            let descs = vec![
                D::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride, padding, bias: true },
                D::Flatten,
            ];
            let m = ModelGraph::build(&crate::nn::ArchDescriptor { input_shape: vec![2, 5, 5], layers: descs }).unwrap();
            let f = m.output_shape().iter().product::<usize>();
            let mut layers = m.layers().to_vec();
            layers.push(Layer::Dense(Dense {
                weight: Tensor::zeros(&[3, f]),
                bias: None,
            }));
            let mut m = ModelGraph::from_layers(vec![2, 5, 5], layers).unwrap();
            randomize(&mut m, 5);
            check(&m, &input(&[2, 2, 5, 5], 6), &[0, 2], Mode::Eval);
        }
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let logits = input(&[3, 4], 9);
        let (_, g, _) = softmax_xent(&logits, &[0, 3, 1]);
        for row in g.data().chunks_exact(4) {
            assert!(row.iter().sum::<f32>().abs() < 1e-7);
        }
    }
}

