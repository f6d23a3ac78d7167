use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{ChannelAffine, Layer, Mode, ModelGraph, Phase};
use crate::stats::{measure_stats, BoundaryStats, ChannelStats};
use crate::tensor::Tensor;

use super::{end_stats, RenormConfig, RenormMode};

/// Substitute for a zero standard deviation.
pub const DEAD_STD_EPS: f64 = 1e-5;

/// Goal statistics at λ: per channel, mean and std of the two end models
/// mixed linearly.
pub fn goal_stats(a: &ModelGraph, b: &ModelGraph, lambda: f64, data: &Dataset, config: &RenormConfig) -> Result<ChannelStats> {
    a.ensure_same_architecture(b)?;
    end_stats(a, data, config)?.lerp(&end_stats(b, data, config)?, lambda)
}

/// Makes sure every boundary ends its attachments with a `channel_affine`,
/// inserting identity ones where needed.
pub fn with_corrections(model: &ModelGraph) -> Result<ModelGraph> {
    let missing: Vec<usize> = model
        .boundaries()
        .iter()
        .filter(|b| !matches!(model.layers()[b.pre_act], Layer::ChannelAffine(_)))
        .map(|b| b.pre_act)
        .collect();
    if missing.is_empty() {
        return Ok(model.clone());
    }
    let mut layers = Vec::with_capacity(model.layers().len() + missing.len());
    for (i, layer) in model.layers().iter().enumerate() {
        layers.push(layer.clone());
        if missing.contains(&i) {
            let c = model.layer_output_shape(i)[0];
            layers.push(Layer::ChannelAffine(ChannelAffine {
                scale: Tensor::full(&[c], 1.0),
                shift: Tensor::zeros(&[c]),
            }));
        }
    }
    let mut out = ModelGraph::from_layers(model.input_shape().to_vec(), layers)?;
    out.meta = model.meta.clone();
    Ok(out)
}

/// Attaches per-channel corrections so each boundary's pre-activation
/// statistics move to `goals`, in the form selected by `config.mode`.
pub fn repair(model: &ModelGraph, goals: &ChannelStats, data: &Dataset, config: &RenormConfig) -> Result<ModelGraph> {
    if !config.mode.uses_goals() {
        return Err(Error::InvalidArgument(format!("{} is not a correction mode", config.mode.name())));
    }
    if goals.phase != Phase::PreActivation {
        return Err(Error::InvalidArgument("goal statistics must be pre-activation".into()));
    }
    let mut out = with_corrections(model)?;
    let ids: Vec<usize> = out.boundaries().iter().map(|b| b.id).collect();
    for &id in &ids {
        let g = goals.require(id)?;
        if g.mean.len() != out.boundaries()[id].units || g.std.len() != g.mean.len() {
            return Err(Error::BoundaryMismatch(format!("goal statistics for boundary {id} have the wrong width")));
        }
    }
    let data = config.stats_data(data);
    let plan = config.plan()?;
    if config.sequential {
        for &id in &ids {
            let current = measure_stats(&out, &data, &plan, Mode::Eval, Phase::PreActivation, Some(&[id]))?;
            correct(&mut out, id, current.require(id)?, goals.require(id)?, config.mode);
        }
    } else {
        let current = measure_stats(&out, &data, &plan, Mode::Eval, Phase::PreActivation, None)?;
        for &id in &ids {
            correct(&mut out, id, current.require(id)?, goals.require(id)?, config.mode);
        }
    }
    Ok(out)
}

fn guarded(std: &[f64], what: &str, boundary: usize) -> Vec<f64> {
    let dead = std.iter().filter(|&&s| !(s > 0.0)).count();
    if dead > 0 {
        log::warn!("boundary {boundary}: {dead} {what} channel(s) with zero std, using {DEAD_STD_EPS}");
    }
    std.iter().map(|&s| if s > 0.0 { s } else { DEAD_STD_EPS }).collect()
}

/// Composes `y = s·x + t` onto the boundary's correction layer.
fn correct(model: &mut ModelGraph, id: usize, current: &BoundaryStats, goal: &BoundaryStats, mode: RenormMode) {
    let sigma = guarded(&current.std, "measured", id);
    let goal_std = guarded(&goal.std, "goal", id);
    let n = sigma.len();
    let (s, t): (Vec<f64>, Vec<f64>) = match mode {
        RenormMode::Repair => (0..n)
            .map(|c| {
                let s = goal_std[c] / sigma[c];
                (s, goal.mean[c] - current.mean[c] * s)
            })
            .unzip(),
        RenormMode::Rescale => (0..n).map(|c| (goal_std[c] / sigma[c], 0.0)).unzip(),
        RenormMode::RescaleAvg => {
            let avg = goal_std.iter().sum::<f64>() / n as f64;
            (0..n).map(|c| (avg / sigma[c], 0.0)).unzip()
        }
        RenormMode::Reshift => (0..n).map(|c| (1.0, goal.mean[c] - current.mean[c])).unzip(),
        RenormMode::None | RenormMode::Reset => unreachable!("checked by the caller"),
    };
    let layer = model.boundaries()[id].pre_act;
    let Layer::ChannelAffine(a) = &mut model.layers_mut()[layer] else {
        unreachable!("corrections were inserted")
    };
    for c in 0..n {
        let (scale, shift) = (a.scale.data()[c] as f64, a.shift.data()[c] as f64);
        a.scale.data_mut()[c] = (s[c] * scale) as f32;
        a.shift.data_mut()[c] = (s[c] * shift + t[c]) as f32;
    }
}
