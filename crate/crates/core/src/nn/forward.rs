use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ops, Layer, ModelGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// Batchnorm uses running statistics.
    #[default]
    Eval,
    /// Batchnorm normalizes with the statistics of the current batch. Running
    /// statistics are never touched by a forward pass.
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreActivation,
    #[default]
    PostActivation,
}

/// Hooks into a forward pass. Boundary hooks may rewrite the activation in
/// place; the rewritten value is what the rest of the network sees.
pub trait Probe {
    fn layer_input(&mut self, _layer: usize, _x: &Tensor) {}

    fn boundary(&mut self, _boundary: usize, _phase: Phase, _x: &mut Tensor) -> Result<()> {
        Ok(())
    }
}

struct NoProbe;
impl Probe for NoProbe {}

#[derive(Clone, Debug, Default)]
pub struct TapRequest {
    /// `None` taps every boundary.
    pub boundaries: Option<Vec<usize>>,
    pub phase: Phase,
}

impl TapRequest {
    pub fn all(phase: Phase) -> Self {
        TapRequest {
            boundaries: None,
            phase,
        }
    }

    pub fn only(boundaries: &[usize], phase: Phase) -> Self {
        TapRequest {
            boundaries: Some(boundaries.to_vec()),
            phase,
        }
    }

    fn wants(&self, b: usize, phase: Phase) -> bool {
        phase == self.phase && self.boundaries.as_ref().is_none_or(|v| v.contains(&b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTap {
    pub boundary: usize,
    pub phase: Phase,
    pub tensor: Tensor,
}

struct TapCollector<'a> {
    request: &'a TapRequest,
    taps: Vec<ActivationTap>,
}

impl Probe for TapCollector<'_> {
    fn boundary(&mut self, boundary: usize, phase: Phase, x: &mut Tensor) -> Result<()> {
        if self.request.wants(boundary, phase) {
            self.taps.push(ActivationTap {
                boundary,
                phase,
                tensor: x.clone(),
            });
        }
        Ok(())
    }
}

impl ModelGraph {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_probed(x, mode, &mut NoProbe)
    }

    /// Forward pass capturing the requested boundary activations, ordered by
    /// boundary id.
    pub fn forward_taps(&self, x: &Tensor, mode: Mode, request: &TapRequest) -> Result<(Tensor, Vec<ActivationTap>)> {
        let mut collector = TapCollector {
            request,
            taps: Vec::new(),
        };
        let y = self.forward_probed(x, mode, &mut collector)?;
        let mut taps = collector.taps;
        taps.sort_by_key(|t| t.boundary);
        Ok((y, taps))
    }

    /// `(boundary, phase)` events fired after each layer's output.
    pub(crate) fn boundary_events(&self) -> Vec<Vec<(usize, Phase)>> {
        let mut events = vec![Vec::new(); self.layers.len()];
        for b in &self.boundaries {
            events[b.pre_act].push((b.id, Phase::PreActivation));
            events[b.post_act].push((b.id, Phase::PostActivation));
        }
        events
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "input batch {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        if x.dim(0) == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    pub fn forward_probed(&self, x: &Tensor, mode: Mode, probe: &mut dyn Probe) -> Result<Tensor> {
        self.check_input(x)?;
        let events = self.boundary_events();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            probe.layer_input(i, &cur);
            cur = apply_layer(layer, cur, mode);
            if !cur.all_finite() {
                return Err(Error::Overflow {
                    layer: i,
                    kind: layer.kind(),
                });
            }
            for &(b, phase) in &events[i] {
                probe.boundary(b, phase, &mut cur)?;
            }
        }
        Ok(cur)
    }
}

fn apply_layer(layer: &Layer, mut x: Tensor, mode: Mode) -> Tensor {
    match layer {
        Layer::Dense(d) => ops::dense_forward(d, &x),
        Layer::Conv2d(c) => ops::conv_forward(c, &x),
        Layer::Relu => {
            ops::relu(&mut x);
            x
        }
        Layer::MaxPool2d { kernel, stride } => ops::maxpool_forward(&x, *kernel, *stride).0,
        Layer::Flatten => {
            let n = x.dim(0);
            let f = x.row_len();
            x.reshape(&[n, f]).expect("flatten preserves element count")
        }
        Layer::BatchNorm(bn) => {
            match mode {
                Mode::Eval => ops::batchnorm_eval(bn, &mut x),
                Mode::Train => {
                    ops::batchnorm_train(bn, &mut x);
                }
            }
            x
        }
        Layer::LayerNorm(ln) => {
            ops::layernorm_forward(ln, &mut x);
            x
        }
        Layer::ChannelAffine(a) => {
            ops::affine_forward(a, &mut x);
            x
        }
    }
}
