//! Model representation: sequential layer stacks, their parameters, and the
//! permutation boundaries between hidden weight layers.

mod checkpoint;
mod fold;
mod forward;
pub(crate) mod ops;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use forward::{ActivationTap, Mode, Phase, Probe, TapRequest};

/// Parameter-free description of one layer. This is what architecture
/// descriptors and checkpoint headers carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDesc {
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    Flatten,
    BatchNorm {
        channels: usize,
        #[serde(default = "yes")]
        affine: bool,
        #[serde(default = "default_momentum")]
        momentum: f32,
        #[serde(default = "default_eps")]
        eps: f32,
    },
    LayerNorm {
        normalized_shape: Vec<usize>,
        #[serde(default = "yes")]
        affine: bool,
        #[serde(default = "default_eps")]
        eps: f32,
    },
    ChannelAffine {
        channels: usize,
    },
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_momentum() -> f32 {
    0.1
}
fn default_eps() -> f32 {
    1e-5
}

/// A structured architecture description, accepted as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    /// Per-sample input shape, e.g. `[784]` or `[1, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerDesc>,
}

impl ArchDescriptor {
    /// Plain ReLU MLP. A flatten is prepended when the input is not 1-D.
    pub fn mlp(input_shape: &[usize], widths: &[usize], classes: usize) -> Self {
        Self::mlp_with(input_shape, widths, classes, Norm::None, true)
    }

    pub fn mlp_with(input_shape: &[usize], widths: &[usize], classes: usize, norm: Norm, bias: bool) -> Self {
        let mut layers = Vec::new();
        if input_shape.len() > 1 {
            layers.push(LayerDesc::Flatten);
        }
        let mut fan_in: usize = input_shape.iter().product();
        for &w in widths {
            layers.push(LayerDesc::Dense {
                in_features: fan_in,
                out_features: w,
                bias,
            });
            match norm {
                Norm::None => {}
                Norm::Batch => layers.push(LayerDesc::BatchNorm {
                    channels: w,
                    affine: true,
                    momentum: default_momentum(),
                    eps: default_eps(),
                }),
                Norm::Layer => layers.push(LayerDesc::LayerNorm {
                    normalized_shape: vec![w],
                    affine: true,
                    eps: default_eps(),
                }),
            }
            layers.push(LayerDesc::Relu);
            fan_in = w;
        }
        layers.push(LayerDesc::Dense {
            in_features: fan_in,
            out_features: classes,
            bias,
        });
        ArchDescriptor {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// VGG-style stack: each entry of `channels` is a 3×3 conv (+norm) + ReLU,
    /// `None` entries are 2×2 max-pools; a single dense classifier follows.
    pub fn vgg(input_shape: [usize; 3], channels: &[Option<usize>], classes: usize, norm: Norm) -> Self {
        let [mut c, mut h, mut w] = input_shape;
        let mut layers = Vec::new();
        for entry in channels {
            match *entry {
                Some(out) => {
                    layers.push(LayerDesc::Conv2d {
                        in_channels: c,
                        out_channels: out,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                        bias: true,
                    });
                    match norm {
                        Norm::None => {}
                        Norm::Batch => layers.push(LayerDesc::BatchNorm {
                            channels: out,
                            affine: true,
                            momentum: default_momentum(),
                            eps: default_eps(),
                        }),
                        Norm::Layer => layers.push(LayerDesc::LayerNorm {
                            normalized_shape: vec![out, h, w],
                            affine: true,
                            eps: default_eps(),
                        }),
                    }
                    layers.push(LayerDesc::Relu);
                    c = out;
                }
                None => {
                    layers.push(LayerDesc::MaxPool2d {
                        kernel: 2,
                        stride: Some(2),
                    });
                    h /= 2;
                    w /= 2;
                }
            }
        }
        layers.push(LayerDesc::Flatten);
        layers.push(LayerDesc::Dense {
            in_features: c * h * w,
            out_features: classes,
            bias: true,
        });
        ArchDescriptor {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    None,
    Batch,
    Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, kernel, kernel]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
}

/// Normalizes each sample over all of its features; the affine part is
/// per channel (leading feature axis).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub normalized_shape: Vec<usize>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub eps: f32,
}

/// Per-channel `x * scale + shift`; the form re-normalization corrections take.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub scale: Tensor,
    pub shift: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    Flatten,
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    ChannelAffine(ChannelAffine),
}

/// What a parameter tensor is for. Running statistics are state, not
/// learnable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
    AffineScale,
    AffineShift,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::NormScale => "norm_scale",
            ParamRole::NormShift => "norm_shift",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
            ParamRole::AffineScale => "affine_scale",
            ParamRole::AffineShift => "affine_shift",
        }
    }

    pub fn is_learnable(self) -> bool {
        matches!(
            self,
            ParamRole::Weight | ParamRole::Bias | ParamRole::NormScale | ParamRole::NormShift
        )
    }

    pub fn is_running_stat(self) -> bool {
        matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

impl Layer {
    pub fn from_desc(desc: &LayerDesc) -> Layer {
        match *desc {
            LayerDesc::Dense {
                in_features,
                out_features,
                bias,
            } => Layer::Dense(Dense {
                weight: Tensor::zeros(&[out_features, in_features]),
                bias: bias.then(|| Tensor::zeros(&[out_features])),
            }),
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => Layer::Conv2d(Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                bias: bias.then(|| Tensor::zeros(&[out_channels])),
            }),
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::MaxPool2d { kernel, stride } => Layer::MaxPool2d {
                kernel,
                stride: stride.unwrap_or(kernel),
            },
            LayerDesc::Flatten => Layer::Flatten,
            LayerDesc::BatchNorm {
                channels,
                affine,
                momentum,
                eps,
            } => Layer::BatchNorm(BatchNorm {
                weight: affine.then(|| Tensor::full(&[channels], 1.0)),
                bias: affine.then(|| Tensor::zeros(&[channels])),
                running_mean: Tensor::zeros(&[channels]),
                running_var: Tensor::full(&[channels], 1.0),
                momentum,
                eps,
            }),
            LayerDesc::LayerNorm {
                ref normalized_shape,
                affine,
                eps,
            } => {
                let ch = normalized_shape.first().copied().unwrap_or(0);
                Layer::LayerNorm(LayerNorm {
                    normalized_shape: normalized_shape.clone(),
                    weight: affine.then(|| Tensor::full(&[ch], 1.0)),
                    bias: affine.then(|| Tensor::zeros(&[ch])),
                    eps,
                })
            }
            LayerDesc::ChannelAffine { channels } => Layer::ChannelAffine(ChannelAffine {
                scale: Tensor::full(&[channels], 1.0),
                shift: Tensor::zeros(&[channels]),
            }),
        }
    }

    pub fn desc(&self) -> LayerDesc {
        match self {
            Layer::Dense(d) => LayerDesc::Dense {
                in_features: d.weight.dim(1),
                out_features: d.weight.dim(0),
                bias: d.bias.is_some(),
            },
            Layer::Conv2d(c) => LayerDesc::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                bias: c.bias.is_some(),
            },
            Layer::Relu => LayerDesc::Relu,
            Layer::MaxPool2d { kernel, stride } => LayerDesc::MaxPool2d {
                kernel: *kernel,
                stride: Some(*stride),
            },
            Layer::Flatten => LayerDesc::Flatten,
            Layer::BatchNorm(bn) => LayerDesc::BatchNorm {
                channels: bn.running_mean.len(),
                affine: bn.weight.is_some(),
                momentum: bn.momentum,
                eps: bn.eps,
            },
            Layer::LayerNorm(ln) => LayerDesc::LayerNorm {
                normalized_shape: ln.normalized_shape.clone(),
                affine: ln.weight.is_some(),
                eps: ln.eps,
            },
            Layer::ChannelAffine(a) => LayerDesc::ChannelAffine {
                channels: a.scale.len(),
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::LayerNorm(_) => "layernorm",
            Layer::ChannelAffine(_) => "channel_affine",
        }
    }

    pub fn is_weight_layer(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// Layers that attach to the preceding weight layer's output channels.
    pub fn is_attachment(&self) -> bool {
        matches!(self, Layer::BatchNorm(_) | Layer::LayerNorm(_) | Layer::ChannelAffine(_))
    }

    pub fn tensors(&self) -> Vec<(ParamRole, &Tensor)> {
        let mut out = Vec::new();
        match self {
            Layer::Dense(Dense { weight, bias }) | Layer::Conv2d(Conv2d { weight, bias, .. }) => {
                out.push((ParamRole::Weight, weight));
                if let Some(b) = bias {
                    out.push((ParamRole::Bias, b));
                }
            }
            Layer::BatchNorm(bn) => {
                if let Some(w) = &bn.weight {
                    out.push((ParamRole::NormScale, w));
                }
                if let Some(b) = &bn.bias {
                    out.push((ParamRole::NormShift, b));
                }
                out.push((ParamRole::RunningMean, &bn.running_mean));
                out.push((ParamRole::RunningVar, &bn.running_var));
            }
            Layer::LayerNorm(ln) => {
                if let Some(w) = &ln.weight {
                    out.push((ParamRole::NormScale, w));
                }
                if let Some(b) = &ln.bias {
                    out.push((ParamRole::NormShift, b));
                }
            }
            Layer::ChannelAffine(a) => {
                out.push((ParamRole::AffineScale, &a.scale));
                out.push((ParamRole::AffineShift, &a.shift));
            }
            Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => {}
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamRole, &mut Tensor)> {
        let mut out = Vec::new();
        match self {
            Layer::Dense(Dense { weight, bias }) | Layer::Conv2d(Conv2d { weight, bias, .. }) => {
                out.push((ParamRole::Weight, weight));
                if let Some(b) = bias {
                    out.push((ParamRole::Bias, b));
                }
            }
            Layer::BatchNorm(bn) => {
                if let Some(w) = &mut bn.weight {
                    out.push((ParamRole::NormScale, w));
                }
                if let Some(b) = &mut bn.bias {
                    out.push((ParamRole::NormShift, b));
                }
                out.push((ParamRole::RunningMean, &mut bn.running_mean));
                out.push((ParamRole::RunningVar, &mut bn.running_var));
            }
            Layer::LayerNorm(ln) => {
                if let Some(w) = &mut ln.weight {
                    out.push((ParamRole::NormScale, w));
                }
                if let Some(b) = &mut ln.bias {
                    out.push((ParamRole::NormShift, b));
                }
            }
            Layer::ChannelAffine(a) => {
                out.push((ParamRole::AffineScale, &mut a.scale));
                out.push((ParamRole::AffineShift, &mut a.shift));
            }
            Layer::Relu | Layer::MaxPool2d { .. } | Layer::Flatten => {}
        }
        out
    }
}

/// A hidden permutation boundary: the output units of one weight layer and
/// everything that must move with them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Boundary {
    pub id: usize,
    pub units: usize,
    /// Weight layer whose output rows/channels are the units.
    pub producer: usize,
    /// Norm / affine layers operating on the producer's output channels.
    pub attached: Vec<usize>,
    /// Layer whose output is the pre-activation value.
    pub pre_act: usize,
    /// Layer whose output is the post-activation value (`== pre_act` when
    /// no ReLU follows).
    pub post_act: usize,
    /// Next weight layer, reading the units as input columns/channels.
    pub consumer: usize,
    /// Consecutive consumer input columns per unit (spatial size after a
    /// flatten, otherwise 1).
    pub consumer_group: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    boundaries: Vec<Boundary>,
    /// Free-form metadata stored in checkpoint headers (e.g. input
    /// normalization constants).
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelGraph {
    /// Validates that the layer shapes compose and derives the boundary map.
    /// Parameters are zero (norm scales one, running variances one).
    pub fn build(arch: &ArchDescriptor) -> Result<ModelGraph> {
        let layers = arch.layers.iter().map(Layer::from_desc).collect();
        Self::from_layers(arch.input_shape.clone(), layers)
    }

    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<ModelGraph> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        let boundaries = derive_boundaries(&layers, &shapes)?;
        let model = ModelGraph {
            input_shape,
            layers,
            shapes,
            boundaries,
            meta: BTreeMap::new(),
        };
        model.check_params()?;
        Ok(model)
    }

    pub fn arch(&self) -> ArchDescriptor {
        ArchDescriptor {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::desc).collect(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Only values may change; use
    /// [`ModelGraph::from_layers`] to restructure.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn layer_output_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn layer_input_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    /// `(boundary_id, unit_count)` for every hidden weight-layer output.
    pub fn boundary_map(&self) -> Vec<(usize, usize)> {
        self.boundaries.iter().map(|b| (b.id, b.units)).collect()
    }

    pub fn weight_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weight_layer())
            .collect()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn has_affine(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::ChannelAffine(_)))
    }

    /// Every parameter tensor in layer order, with its layer index and role.
    pub fn params(&self) -> Vec<(usize, ParamRole, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tensors().into_iter().map(move |(r, t)| (i, r, t)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(usize, ParamRole, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.tensors_mut().into_iter().map(move |(r, t)| (i, r, t)))
            .collect()
    }

    pub fn param_name(layer: usize, role: ParamRole) -> String {
        format!("layers.{layer}.{}", role.name())
    }

    pub fn num_learnable(&self) -> usize {
        self.params()
            .iter()
            .filter(|(_, r, _)| r.is_learnable())
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Same layer kinds, shapes and hyperparameters.
    pub fn same_architecture(&self, other: &ModelGraph) -> bool {
        self.input_shape == other.input_shape
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.desc() == b.desc())
    }

    pub fn ensure_same_architecture(&self, other: &ModelGraph) -> Result<()> {
        if self.same_architecture(other) {
            Ok(())
        } else {
            Err(Error::ArchMismatch(
                "models differ in layer kinds, shapes or hyperparameters".into(),
            ))
        }
    }

    /// Elementwise combination of every tensor of two same-architecture
    /// models: `out = f(role, a, b)`.
    pub fn zip_map(
        &self,
        other: &ModelGraph,
        f: impl Fn(ParamRole, f32, f32) -> f32,
    ) -> Result<ModelGraph> {
        self.ensure_same_architecture(other)?;
        let mut out = self.clone();
        let theirs = other.params();
        for ((_, role, t), (_, _, o)) in out.params_mut().into_iter().zip(theirs) {
            for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
                *x = f(role, *x, y);
            }
        }
        Ok(out)
    }

    fn check_params(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::BatchNorm(bn) => {
                    if !(bn.eps > 0.0) {
                        return Err(Error::InvalidArgument(format!("layer {i}: batchnorm eps must be > 0")));
                    }
                    if bn.running_var.data().iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: batchnorm running_var must be strictly positive"
                        )));
                    }
                }
                Layer::LayerNorm(ln) if !(ln.eps > 0.0) => {
                    return Err(Error::InvalidArgument(format!("layer {i}: layernorm eps must be > 0")));
                }
                Layer::ChannelAffine(a) => {
                    if a.scale.data().iter().any(|&s| !s.is_finite() || s == 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: channel_affine scale must be finite and nonzero"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn infer_shapes(input: &[usize], layers: &[Layer]) -> Result<Vec<Vec<usize>>> {
    if input.is_empty() || input.contains(&0) {
        return Err(Error::Shape(format!("invalid input shape {input:?}")));
    }
    let mut cur = input.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let err = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.kind()));
        cur = match layer {
            Layer::Dense(d) => {
                let (out, inp) = (d.weight.dim(0), d.weight.dim(1));
                if cur != [inp] {
                    return Err(err(format!("expects input [{inp}], got {cur:?}")));
                }
                if d.bias.as_ref().is_some_and(|b| b.len() != out) {
                    return Err(err("bias length mismatch".into()));
                }
                vec![out]
            }
            Layer::Conv2d(c) => {
                if cur.len() != 3 || cur[0] != c.in_channels {
                    return Err(err(format!(
                        "expects input [{}, H, W], got {cur:?}",
                        c.in_channels
                    )));
                }
                if c.kernel == 0 || c.stride == 0 {
                    return Err(err("kernel and stride must be positive".into()));
                }
                let (h, w) = (cur[1] + 2 * c.padding, cur[2] + 2 * c.padding);
                if h < c.kernel || w < c.kernel {
                    return Err(err(format!("kernel {} larger than padded input", c.kernel)));
                }
                vec![
                    c.out_channels,
                    (h - c.kernel) / c.stride + 1,
                    (w - c.kernel) / c.stride + 1,
                ]
            }
            Layer::Relu => cur,
            Layer::MaxPool2d { kernel, stride } => {
                if cur.len() != 3 || cur[1] < *kernel || cur[2] < *kernel || *kernel == 0 || *stride == 0 {
                    return Err(err(format!("cannot pool {cur:?} with kernel {kernel}")));
                }
                vec![cur[0], (cur[1] - kernel) / stride + 1, (cur[2] - kernel) / stride + 1]
            }
            Layer::Flatten => vec![cur.iter().product()],
            Layer::BatchNorm(bn) => {
                if cur[0] != bn.running_mean.len() {
                    return Err(err(format!(
                        "{} channels, input has {}",
                        bn.running_mean.len(),
                        cur[0]
                    )));
                }
                cur
            }
            Layer::LayerNorm(ln) => {
                if ln.normalized_shape != cur {
                    return Err(err(format!(
                        "normalized_shape {:?} != input {cur:?}",
                        ln.normalized_shape
                    )));
                }
                cur
            }
            Layer::ChannelAffine(a) => {
                if cur[0] != a.scale.len() || a.shift.len() != a.scale.len() {
                    return Err(err(format!("{} channels, input has {}", a.scale.len(), cur[0])));
                }
                cur
            }
        };
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

fn derive_boundaries(layers: &[Layer], shapes: &[Vec<usize>]) -> Result<Vec<Boundary>> {
    let weight: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].is_weight_layer()).collect();

    // attachments must directly follow a hidden weight layer
    for (i, layer) in layers.iter().enumerate() {
        if !layer.is_attachment() {
            continue;
        }
        let mut j = i;
        while j > 0 && layers[j - 1].is_attachment() {
            j -= 1;
        }
        if j == 0 || !layers[j - 1].is_weight_layer() {
            return Err(Error::Shape(format!(
                "layer {i} ({}) is not attached to a preceding weight layer",
                layer.kind()
            )));
        }
        if Some(&(j - 1)) == weight.last() {
            return Err(Error::Shape(format!(
                "layer {i} ({}) is attached to the output layer",
                layer.kind()
            )));
        }
    }

    let mut out = Vec::new();
    for (id, pair) in weight.windows(2).enumerate() {
        let (producer, consumer) = (pair[0], pair[1]);
        let units = shapes[producer][0];
        let mut attached = Vec::new();
        let mut k = producer + 1;
        while k < consumer && layers[k].is_attachment() {
            attached.push(k);
            k += 1;
        }
        let pre_act = attached.last().copied().unwrap_or(producer);
        let post_act = if k < consumer && matches!(layers[k], Layer::Relu) {
            k
        } else {
            pre_act
        };
        let consumer_in = match &layers[consumer] {
            Layer::Dense(d) => d.weight.dim(1),
            Layer::Conv2d(c) => c.in_channels,
            _ => unreachable!(),
        };
        let consumer_group = match &layers[consumer] {
            Layer::Conv2d(_) => 1,
            _ => consumer_in / units,
        };
        if consumer_in != units * consumer_group {
            return Err(Error::Shape(format!(
                "boundary {id}: consumer layer {consumer} input {consumer_in} is not a multiple of {units} units"
            )));
        }
        out.push(Boundary {
            id,
            units,
            producer,
            attached,
            pre_act,
            post_act,
            consumer,
            consumer_group,
        });
    }
    Ok(out)
}
