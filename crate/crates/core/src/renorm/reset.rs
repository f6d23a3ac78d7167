use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::ops::{channel_layout, channel_moments};
use crate::nn::{Layer, Mode, ModelGraph, Probe};
use crate::stats::fold_batches;
use crate::tensor::Tensor;

/// Per-layer batch means and unbiased batch variances of batchnorm inputs.
struct BnInputs {
    layers: Vec<usize>,
    stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Probe for BnInputs {
    fn layer_input(&mut self, layer: usize, x: &Tensor) {
        if self.layers.contains(&layer) {
            let (n, _, s) = channel_layout(x);
            let count = (n * s) as f64;
            let (mean, var) = channel_moments(x);
            let unbiased = var.iter().map(|v| v * count / (count - 1.0)).collect();
            self.stats.push((mean, unbiased));
        }
    }
}

/// Recomputes every batchnorm's running statistics as the equal-weight
/// average over batches of the batch mean and unbiased batch variance, the
/// network running in training mode.
pub fn reset_bn(model: &ModelGraph, data: &Dataset, batch_size: usize) -> Result<ModelGraph> {
    let bn: Vec<usize> = (0..model.layers().len())
        .filter(|&i| matches!(model.layers()[i], Layer::BatchNorm(_)))
        .collect();
    if bn.is_empty() {
        log::warn!("reset requested on a model without batchnorm; nothing to do");
        return Ok(model.clone());
    }
    if batch_size < 2 {
        return Err(Error::InvalidArgument("reset needs batches of at least 2 samples".into()));
    }
    let plan = BatchPlan::stats(batch_size);
    let init: Vec<(Vec<f64>, Vec<f64>)> = bn
        .iter()
        .map(|&i| {
            let c = model.layer_output_shape(i)[0];
            (vec![0.0; c], vec![0.0; c])
        })
        .collect();
    let (sums, batches) = fold_batches(
        data,
        &plan,
        (init, 0usize),
        |batch| {
            let mut probe = BnInputs {
                layers: bn.clone(),
                stats: Vec::with_capacity(bn.len()),
            };
            model.forward_probed(&batch.inputs, Mode::Train, &mut probe)?;
            Ok(probe.stats)
        },
        |(acc, count), part| {
            for ((sm, sv), (m, v)) in acc.iter_mut().zip(part) {
                sm.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
                sv.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            }
            *count += 1;
        },
    )?;
    let mut out = model.clone();
    let k = batches as f64;
    for (&i, (sm, sv)) in bn.iter().zip(&sums) {
        let Layer::BatchNorm(layer) = &mut out.layers_mut()[i] else { unreachable!() };
        for (r, s) in layer.running_mean.data_mut().iter_mut().zip(sm) {
            *r = (s / k) as f32;
        }
        for (r, s) in layer.running_var.data_mut().iter_mut().zip(sv) {
            *r = ((s / k) as f32).max(f32::MIN_POSITIVE);
        }
    }
    log::debug!("reset {} batchnorm layer(s) over {batches} batches", bn.len());
    Ok(out)
}
