use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::lap::{solve_lap_flat, Sense};
use crate::nn::{Mode, ModelGraph, Phase};
use crate::stats::cross_moments;

use super::perm::{apply_perm, PermSpec};
use super::weight::{param_distance, MatchReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivationMatchOptions {
    pub phase: Phase,
    pub batch_size: usize,
}

impl Default for ActivationMatchOptions {
    fn default() -> Self {
        ActivationMatchOptions {
            phase: Phase::PostActivation,
            batch_size: 128,
        }
    }
}

pub fn activation_match(a: &ModelGraph, b: &ModelGraph, data: &Dataset) -> Result<(PermSpec, MatchReport)> {
    activation_match_with(a, b, data, &ActivationMatchOptions::default())
}

/// Matches every boundary independently by maximizing the summed Pearson
/// correlation of paired units. Both models are evaluated in one pass.
pub fn activation_match_with(
    a: &ModelGraph,
    b: &ModelGraph,
    data: &Dataset,
    opts: &ActivationMatchOptions,
) -> Result<(PermSpec, MatchReport)> {
    a.ensure_same_architecture(b)?;
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let plan = BatchPlan::stats(opts.batch_size);
    let batches = data.num_batches(&plan);
    if batches < 2 {
        return Err(Error::InvalidArgument(format!(
            "activation matching needs at least 2 full batches of {}, dataset gives {batches}",
            opts.batch_size
        )));
    }
    let moments = cross_moments(a, b, data, &plan, Mode::Eval, opts.phase)?;
    let mut perm = PermSpec::identity(a);
    let mut report = MatchReport {
        method: "activation".into(),
        distance_before: param_distance(a, b)?,
        sweeps: 1,
        converged: true,
        ..Default::default()
    };
    for (bd, cm) in a.boundaries().iter().zip(&moments) {
        let (corr, dead) = cm.correlation();
        if !dead.is_empty() {
            log::warn!(
                "boundary {}: {} unit(s) with zero variance get zero correlation",
                bd.id,
                dead.len()
            );
        }
        report.dead_units.extend(dead.into_iter().map(|(side, u)| (bd.id, side, u)));
        let sol = solve_lap_flat(bd.units, &corr, Sense::Maximize)?;
        report.correlation.push(sol.objective / bd.units as f64);
        perm.set(bd.id, sol.perm)?;
    }
    report.distance_after = param_distance(a, &apply_perm(b, &perm)?)?;
    report.objective.push(report.distance_after);
    Ok((perm, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{ArchDescriptor, Norm};
    use crate::tensor::Tensor;
    use crate::train::{init_params, InitScheme};

    fn blobs(seed: u64, n: usize, dims: usize, classes: usize, spread: f64) -> Dataset {
        synth_blobs(seed, n, dims, classes, spread).unwrap()
    }

    fn random_model(arch: &ArchDescriptor, seed: u64) -> ModelGraph {
        init_params(&ModelGraph::build(arch).unwrap(), InitScheme::KaimingUniform, seed)
    }

    fn images(n: usize, seed: u64) -> Dataset {
        let d = blobs(seed, n, 3 * 6 * 6, 3, 1.0);
        d.with_feature_shape(&[3, 6, 6]).unwrap()
    }

    #[test]
    fn planted_permutation_is_recovered() {
        let cases = [
            (ArchDescriptor::mlp(&[10], &[16, 12], 3), blobs(1, 256, 10, 3, 1.0)),
            (ArchDescriptor::mlp_with(&[10], &[16, 12], 3, Norm::Batch, true), blobs(2, 256, 10, 3, 1.0)),
            (ArchDescriptor::vgg([3, 6, 6], &[Some(6), None, Some(5)], 3, Norm::Batch), images(128, 3)),
        ];
        for (k, (arch, data)) in cases.iter().enumerate() {
            let a = random_model(arch, k as u64);
            let pi = PermSpec::random(&a, 7 + k as u64);
            let b = apply_perm(&a, &pi).unwrap();
            let opts = ActivationMatchOptions {
                batch_size: 32,
                ..Default::default()
            };
            let (p, r) = activation_match_with(&a, &b, data, &opts).unwrap();
            assert_eq!(p, pi.invert(), "case {k}");
            assert_eq!(r.distance_after, 0.0);
            let (q, _) = activation_match_with(&a, &a, data, &opts).unwrap();
            assert!(q.is_identity());
        }
    }

    #[test]
    fn correlation_matches_two_pass_textbook() {
        let arch = ArchDescriptor::mlp(&[6], &[5], 2);
        let (a, b) = (random_model(&arch, 1), random_model(&arch, 2));
        let data = blobs(5, 120, 6, 2, 1.0);
        let plan = BatchPlan::stats(40);
        let cms = cross_moments(&a, &b, &data, &plan, Mode::Eval, Phase::PreActivation).unwrap();
        let (corr, _) = cms[0].correlation();
        let (_, ta) = a.forward_taps(data.inputs(), Mode::Eval, &crate::nn::TapRequest::all(Phase::PreActivation)).unwrap();
        let (_, tb) = b.forward_taps(data.inputs(), Mode::Eval, &crate::nn::TapRequest::all(Phase::PreActivation)).unwrap();
        let col = |t: &Tensor, j: usize| -> Vec<f64> { (0..t.dim(0)).map(|i| t.data()[i * 5 + j] as f64).collect() };
        for i in 0..5 {
            for j in 0..5 {
                let (x, y) = (col(&ta[0].tensor, i), col(&tb[0].tensor, j));
                let n = x.len() as f64;
                let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
                let sxy: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
                let sxx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
                let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
                let r = sxy / (sxx * syy).sqrt();
                assert!((corr[i * 5 + j] - r).abs() < 1e-10, "{} vs {r}", corr[i * 5 + j]);
            }
        }
    }

    #[test]
    fn dead_units_are_reported_not_nan() {
        let arch = ArchDescriptor::mlp(&[4], &[6], 2);
        let mut a = random_model(&arch, 3);
        if let crate::Layer::Dense(d) = &mut a.layers_mut()[0] {
            for v in &mut d.weight.data_mut()[8..12] {
                *v = 0.0;
            }
            d.bias.as_mut().unwrap().data_mut()[2] = -1.0;
        }
        let data = blobs(0, 64, 4, 2, 1.0);
        let (p, r) = activation_match_with(&a, &a, &data, &ActivationMatchOptions { batch_size: 16, ..Default::default() }).unwrap();
        assert!(r.dead_units.contains(&(0, 0, 2)) && r.dead_units.contains(&(0, 1, 2)));
        assert!(r.correlation.iter().all(|c| c.is_finite()));
        p.validate(&a).unwrap();
    }

    #[test]
    fn needs_two_batches() {
        let arch = ArchDescriptor::mlp(&[4], &[6], 2);
        let a = random_model(&arch, 3);
        let data = blobs(0, 20, 4, 2, 1.0);
        let opts = ActivationMatchOptions { batch_size: 16, ..Default::default() };
        assert!(matches!(activation_match_with(&a, &a, &data, &opts), Err(Error::InvalidArgument(_))));
    }
}
