use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{Layer, ModelGraph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases ~ U[−1/√k, 1/√k], k = fan-in.
    #[default]
    KaimingUniform,
    /// Conv weights ~ N(0, 2/k) with k = out_channels·kernel²; dense weights
    /// ~ N(0, 0.01²); biases zero.
    KaimingNormal,
}

/// Dense layers under the normal scheme draw with this standard deviation.
pub const DENSE_NORMAL_STD: f64 = 0.01;

/// Reinitializes every parameter. Norm layers get scale 1, shift 0 and fresh
/// running statistics; corrections become identity.
pub fn init_params(model: &ModelGraph, scheme: InitScheme, seed: u64) -> ModelGraph {
    let mut out = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in out.layers_mut() {
        match layer {
            Layer::Dense(d) => {
                let fan_in = d.weight.dim(1);
                match scheme {
                    InitScheme::KaimingUniform => {
                        uniform(&mut d.weight, fan_in, &mut rng);
                        if let Some(b) = &mut d.bias {
                            uniform(b, fan_in, &mut rng);
                        }
                    }
                    InitScheme::KaimingNormal => {
                        normal(&mut d.weight, DENSE_NORMAL_STD, &mut rng);
                        if let Some(b) = &mut d.bias {
                            b.data_mut().fill(0.0);
                        }
                    }
                }
            }
            Layer::Conv2d(c) => {
                let area = c.kernel * c.kernel;
                match scheme {
                    InitScheme::KaimingUniform => {
                        let fan_in = c.in_channels * area;
                        uniform(&mut c.weight, fan_in, &mut rng);
                        if let Some(b) = &mut c.bias {
                            uniform(b, fan_in, &mut rng);
                        }
                    }
                    InitScheme::KaimingNormal => {
                        let fan_out = c.out_channels * area;
                        normal(&mut c.weight, (2.0 / fan_out as f64).sqrt(), &mut rng);
                        if let Some(b) = &mut c.bias {
                            b.data_mut().fill(0.0);
                        }
                    }
                }
            }
            Layer::BatchNorm(bn) => {
                if let Some(w) = &mut bn.weight {
                    w.data_mut().fill(1.0);
                }
                if let Some(b) = &mut bn.bias {
                    b.data_mut().fill(0.0);
                }
                bn.running_mean.data_mut().fill(0.0);
                bn.running_var.data_mut().fill(1.0);
            }
            Layer::LayerNorm(ln) => {
                if let Some(w) = &mut ln.weight {
                    w.data_mut().fill(1.0);
                }
                if let Some(b) = &mut ln.bias {
                    b.data_mut().fill(0.0);
                }
            }
            Layer::ChannelAffine(a) => {
                a.scale.data_mut().fill(1.0);
                a.shift.data_mut().fill(0.0);
            }
            Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => {}
        }
    }
    out
}

fn uniform(t: &mut Tensor, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound) as f32;
    }
}

fn normal(t: &mut Tensor, std: f64, rng: &mut ChaCha8Rng) {
    let dist = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = dist.sample(rng) as f32;
    }
}
