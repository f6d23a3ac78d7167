use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::ops::{channel_layout, channel_moments};
use crate::nn::{Mode, ModelGraph, Phase, Probe};
use crate::stats::ChannelStats;
use crate::tensor::Tensor;
use crate::train::{evaluate_with, recorded_stats, Metrics};

use super::repair::DEAD_STD_EPS;

/// A model evaluated with training-mode semantics: each boundary is
/// normalized with the statistics of the batch at hand and then moved to
/// the goal statistics. No separate statistics pass is involved.
#[derive(Clone, Debug)]
pub struct BatchCorrected {
    model: ModelGraph,
    goals: ChannelStats,
}

/// Goals mixed from the statistics both end models recorded in training.
pub fn recorded_goals(a: &ModelGraph, b: &ModelGraph, lambda: f64) -> Result<ChannelStats> {
    recorded_stats(a)?.lerp(&recorded_stats(b)?, lambda)
}

pub fn data_independent_correct(model: &ModelGraph, goals: &ChannelStats) -> Result<BatchCorrected> {
    for b in model.boundaries() {
        let g = goals.require(b.id)?;
        if g.mean.len() != b.units {
            return Err(Error::BoundaryMismatch(format!(
                "boundary {}: {} units, recorded statistics for {}",
                b.id,
                b.units,
                g.mean.len()
            )));
        }
    }
    Ok(BatchCorrected {
        model: model.clone(),
        goals: goals.clone(),
    })
}

struct Correction<'a> {
    goals: &'a ChannelStats,
}

impl Probe for Correction<'_> {
    fn boundary(&mut self, boundary: usize, phase: Phase, x: &mut Tensor) -> Result<()> {
        if phase != Phase::PreActivation {
            return Ok(());
        }
        let goal = self.goals.require(boundary)?;
        let (n, c, s) = channel_layout(x);
        let (mean, var) = channel_moments(x);
        let data = x.data_mut();
        for ch in 0..c {
            let sd = var[ch].sqrt();
            let sd = if sd > 0.0 { sd } else { DEAD_STD_EPS };
            let scale = goal.std[ch] / sd;
            let shift = goal.mean[ch] - mean[ch] * scale;
            for i in 0..n {
                let off = (i * c + ch) * s;
                for v in &mut data[off..off + s] {
                    *v = (*v as f64 * scale + shift) as f32;
                }
            }
        }
        Ok(())
    }
}

impl BatchCorrected {
    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    pub fn goals(&self) -> &ChannelStats {
        &self.goals
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().first().is_some_and(|&n| n < 2) {
            return Err(Error::InvalidArgument("batch statistics need at least 2 samples per batch".into()));
        }
        let mut probe = Correction { goals: &self.goals };
        self.model.forward_probed(x, Mode::Train, &mut probe)
    }

    pub fn evaluate(&self, data: &Dataset, batch_size: usize) -> Result<Metrics> {
        if batch_size < 2 || data.len() % batch_size == 1 {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} leaves a batch of one sample for {} samples",
                data.len()
            )));
        }
        evaluate_with(data, batch_size, |x| self.forward(x))
    }
}
