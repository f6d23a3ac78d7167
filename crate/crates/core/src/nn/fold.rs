use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Layer, ModelGraph};

impl ModelGraph {
    /// Merges every `channel_affine` into the layer before it and removes it.
    ///
    /// A correction `y = x·s + m` after a weight layer becomes
    /// `w_row ← w_row·s`, `b ← b·s + m` (a zero bias is created if the layer
    /// had none). After an affine norm layer it scales the norm's own
    /// scale/shift instead.
    pub fn fold_affine(&self) -> Result<ModelGraph> {
        let mut layers: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let Layer::ChannelAffine(a) = layer else {
                layers.push(layer.clone());
                continue;
            };
            let (scale, shift) = (a.scale.data(), a.shift.data());
            let prev = layers.last_mut().ok_or_else(|| {
                Error::InvalidArgument(format!("channel_affine at layer {i} has no preceding layer"))
            })?;
            match prev {
                Layer::Dense(d) => {
                    let cols = d.weight.dim(1);
                    fold_rows(&mut d.weight, cols, &mut d.bias, scale, shift);
                }
                Layer::Conv2d(c) => {
                    let cols = c.weight.row_len();
                    fold_rows(&mut c.weight, cols, &mut c.bias, scale, shift);
                }
                Layer::BatchNorm(bn) if bn.weight.is_some() => {
                    fold_norm_affine(bn.weight.as_mut().unwrap(), bn.bias.as_mut().unwrap(), scale, shift)
                }
                Layer::LayerNorm(ln) if ln.weight.is_some() => {
                    fold_norm_affine(ln.weight.as_mut().unwrap(), ln.bias.as_mut().unwrap(), scale, shift)
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "channel_affine at layer {i} follows a non-foldable {} layer",
                        other.kind()
                    )))
                }
            }
        }
        let mut out = ModelGraph::from_layers(self.input_shape.clone(), layers)?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}

fn fold_rows(weight: &mut Tensor, cols: usize, bias: &mut Option<Tensor>, scale: &[f32], shift: &[f32]) {
    for (row, &s) in weight.data_mut().chunks_exact_mut(cols).zip(scale) {
        for w in row {
            *w *= s;
        }
    }
    let b = bias.get_or_insert_with(|| Tensor::zeros(&[scale.len()]));
    for ((b, &s), &m) in b.data_mut().iter_mut().zip(scale).zip(shift) {
        *b = *b * s + m;
    }
}

fn fold_norm_affine(gamma: &mut Tensor, beta: &mut Tensor, scale: &[f32], shift: &[f32]) {
    for ((g, b), (&s, &m)) in gamma
        .data_mut()
        .iter_mut()
        .zip(beta.data_mut().iter_mut())
        .zip(scale.iter().zip(shift))
    {
        *g *= s;
        *b = *b * s + m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ChannelAffine, Dense, Mode};

    fn dense_with_affine(scale: Vec<f32>, shift: Vec<f32>) -> ModelGraph {
        let weight = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let layers = vec![
            Layer::Dense(Dense {
                weight: weight.clone(),
                bias: Some(Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap()),
            }),
            Layer::ChannelAffine(ChannelAffine {
                scale: Tensor::from_vec(&[2], scale).unwrap(),
                shift: Tensor::from_vec(&[2], shift).unwrap(),
            }),
            Layer::Relu,
            Layer::Dense(Dense {
                weight: Tensor::full(&[1, 2], 1.0),
                bias: None,
            }),
        ];
        ModelGraph::from_layers(vec![3], layers).unwrap()
    }

    #[test]
    fn identity_correction_leaves_weights() {
        let m = dense_with_affine(vec![1.0, 1.0], vec![0.0, 0.0]);
        let f = m.fold_affine().unwrap();
        assert!(!f.has_affine());
        assert_eq!(f.layers()[0], m.layers()[0]);
    }

    #[test]
    fn folding_preserves_outputs_and_is_idempotent() {
        let m = dense_with_affine(vec![1.7, -0.4], vec![0.3, 2.0]);
        let f = m.fold_affine().unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, -3.0, 0.5, -0.5, 0.25]).unwrap();
        let (a, b) = (m.forward(&x, Mode::Eval).unwrap(), f.forward(&x, Mode::Eval).unwrap());
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-5);
        }
        assert_eq!(f.fold_affine().unwrap(), f);
    }

    #[test]
    fn affine_after_relu_is_not_foldable() {
        let layers = vec![
            Layer::Dense(Dense {
                weight: Tensor::full(&[2, 2], 1.0),
                bias: None,
            }),
            Layer::Relu,
            Layer::Dense(Dense {
                weight: Tensor::full(&[2, 2], 1.0),
                bias: None,
            }),
        ];
        let mut m = ModelGraph::from_layers(vec![2], layers).unwrap();
        // smuggle a correction after the relu
        m.layers.insert(
            2,
            Layer::ChannelAffine(ChannelAffine {
                scale: Tensor::full(&[2], 2.0),
                shift: Tensor::zeros(&[2]),
            }),
        );
        assert!(m.fold_affine().is_err());
    }
}
