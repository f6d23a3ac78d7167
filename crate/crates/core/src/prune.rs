//! One-shot unstructured pruning of dense and conv weights, and the
//! statistics-only repair applied afterwards.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelGraph, ParamRole, Phase};
use crate::renorm::{repair, reset_bn, RenormConfig, RenormMode};
use crate::stats::{fold_batches, measure_stats};
use crate::train::gradients;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    #[default]
    Magnitude,
    DiagFisher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherScore {
    /// `w²·F̂`
    #[default]
    WeightedFisher,
    /// `F̂` alone
    Fisher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Global,
    Layerwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreOptions {
    /// Leave the first weight layer out of the prunable set.
    pub exempt_first: bool,
    /// Samples used for the Fisher estimate (all when `None`).
    pub fisher_samples: Option<usize>,
    pub fisher_score: FisherScore,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            exempt_first: false,
            fisher_samples: Some(1024),
            fisher_score: FisherScore::WeightedFisher,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTensor {
    pub layer: usize,
    pub shape: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Importance per prunable weight; larger means more important.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub tensors: Vec<ScoreTensor>,
}

impl ScoreMap {
    pub fn load(path: impl AsRef<Path>) -> Result<ScoreMap> {
        let path = path.as_ref();
        let map: ScoreMap = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for t in &map.tensors {
            if t.scores.len() != t.shape.iter().product::<usize>() || t.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::parse(path, format!("layer {}: scores must be finite and match the shape", t.layer)));
            }
        }
        Ok(map)
    }
}

/// Dense/conv layers whose weights may be pruned.
pub fn prunable_layers(model: &ModelGraph, exempt_first: bool) -> Vec<usize> {
    let w = model.weight_layers();
    w.into_iter().skip(usize::from(exempt_first)).collect()
}

fn weight_of(model: &ModelGraph, layer: usize) -> &crate::tensor::Tensor {
    model.layers()[layer].tensors()[0].1
}

pub fn score(model: &ModelGraph, method: ScoreMethod, data: Option<&Dataset>, opts: &ScoreOptions) -> Result<ScoreMap> {
    let layers = prunable_layers(model, opts.exempt_first);
    match method {
        ScoreMethod::Magnitude => Ok(ScoreMap {
            tensors: layers
                .iter()
                .map(|&l| {
                    let w = weight_of(model, l);
                    ScoreTensor {
                        layer: l,
                        shape: w.shape().to_vec(),
                        scores: w.data().iter().map(|v| v.abs() as f64).collect(),
                    }
                })
                .collect(),
        }),
        ScoreMethod::DiagFisher => {
            let data = data.ok_or_else(|| Error::InvalidArgument("diagonal Fisher scores need a dataset".into()))?;
            let fisher = diag_fisher(model, data, opts.fisher_samples)?;
            Ok(ScoreMap {
                tensors: fisher
                    .into_iter()
                    .filter(|t| layers.contains(&t.layer))
                    .map(|mut t| {
                        if opts.fisher_score == FisherScore::WeightedFisher {
                            let w = weight_of(model, t.layer);
                            for (s, &v) in t.scores.iter_mut().zip(w.data()) {
                                *s *= (v as f64) * (v as f64);
                            }
                        }
                        t
                    })
                    .collect(),
            })
        }
    }
}

/// Empirical diagonal Fisher of every dense/conv weight: the mean over
/// samples of the squared per-sample gradient of the loss (eval mode).
pub fn diag_fisher(model: &ModelGraph, data: &Dataset, samples: Option<usize>) -> Result<Vec<ScoreTensor>> {
    let data = match samples {
        Some(n) if n < data.len() => data.take(n),
        _ => data.clone(),
    };
    let layers = model.weight_layers();
    let slots: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, (l, r, _))| *r == ParamRole::Weight && layers.contains(l))
        .map(|(i, _)| i)
        .collect();
    let init: Vec<Vec<f64>> = layers.iter().map(|&l| vec![0.0; weight_of(model, l).len()]).collect();
    let sums = fold_batches(
        &data,
        &BatchPlan::eval(1),
        init,
        |batch| {
            let (_, g) = gradients(model, &batch.inputs, &batch.labels, Mode::Eval)?;
            Ok(slots
                .iter()
                .map(|&s| g.get(s).expect("weights have gradients").data().iter().map(|&v| (v as f64) * (v as f64)).collect::<Vec<f64>>())
                .collect::<Vec<_>>())
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
            }
        },
    )?;
    let n = data.len() as f64;
    Ok(layers
        .iter()
        .zip(sums)
        .map(|(&l, s)| ScoreTensor {
            layer: l,
            shape: weight_of(model, l).shape().to_vec(),
            scores: s.into_iter().map(|v| v / n).collect(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskTensor {
    pub layer: usize,
    pub shape: Vec<usize>,
    /// `true` keeps the weight.
    #[serde(skip)]
    pub keep: Vec<bool>,
    pub pruned: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub sparsity: f64,
    pub granularity: Granularity,
    pub tensors: Vec<MaskTensor>,
}

impl PruneMask {
    pub fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.keep.len()).sum()
    }

    pub fn pruned(&self) -> usize {
        self.tensors.iter().map(|t| t.keep.iter().filter(|&&k| !k).count()).sum()
    }

    pub fn achieved_sparsity(&self) -> f64 {
        self.pruned() as f64 / self.total().max(1) as f64
    }

    /// Keep bits of all tensors in order, least significant bit first.
    pub fn to_bitmask(&self) -> Vec<u8> {
        let bits: Vec<bool> = self.tensors.iter().flat_map(|t| t.keep.iter().copied()).collect();
        bits.chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |b, (i, &k)| b | (u8::from(k) << i)))
            .collect()
    }

    /// Writes `<stem>.json` (layout) and `<stem>.bits` (keep bits).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join(format!("{stem}.bits")), self.to_bitmask())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<PruneMask> {
        let dir = dir.as_ref();
        let json = dir.join(format!("{stem}.json"));
        let mut mask: PruneMask = serde_json::from_str(&std::fs::read_to_string(&json)?)?;
        let bits = std::fs::read(dir.join(format!("{stem}.bits")))?;
        let total: usize = mask.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if bits.len() != total.div_ceil(8) {
            return Err(Error::parse(json, format!("bitmask holds {} bytes, layout needs {}", bits.len(), total.div_ceil(8))));
        }
        let mut k = 0;
        for t in &mut mask.tensors {
            let n: usize = t.shape.iter().product();
            t.keep = (k..k + n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
            k += n;
            if t.keep.iter().filter(|&&b| !b).count() != t.pruned {
                return Err(Error::parse(&json, format!("layer {}: pruned count disagrees with the bitmask", t.layer)));
            }
        }
        Ok(mask)
    }
}

/// Drops the lowest-scoring `⌊s·N⌋` weights, over all tensors at once or
/// per tensor. Ties go to the earlier tensor and lower flat index.
pub fn mask_from_scores(scores: &ScoreMap, sparsity: f64, granularity: Granularity) -> Result<PruneMask> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity must lie in [0, 1], got {sparsity}")));
    }
    let mut keep: Vec<Vec<bool>> = scores.tensors.iter().map(|t| vec![true; t.scores.len()]).collect();
    let drop = |entries: &mut Vec<(f64, usize, usize)>, count: usize, keep: &mut Vec<Vec<bool>>| {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, t, i) in entries.iter().take(count) {
            keep[t][i] = false;
        }
    };
    match granularity {
        Granularity::Global => {
            let mut all: Vec<(f64, usize, usize)> = scores
                .tensors
                .iter()
                .enumerate()
                .flat_map(|(t, s)| s.scores.iter().enumerate().map(move |(i, &v)| (v, t, i)))
                .collect();
            let count = (sparsity * all.len() as f64).floor() as usize;
            drop(&mut all, count, &mut keep);
        }
        Granularity::Layerwise => {
            for (t, s) in scores.tensors.iter().enumerate() {
                let mut entries: Vec<(f64, usize, usize)> = s.scores.iter().enumerate().map(|(i, &v)| (v, t, i)).collect();
                let count = (sparsity * entries.len() as f64).floor() as usize;
                drop(&mut entries, count, &mut keep);
            }
        }
    }
    Ok(PruneMask {
        sparsity,
        granularity,
        tensors: scores
            .tensors
            .iter()
            .zip(keep)
            .map(|(s, k)| MaskTensor {
                layer: s.layer,
                shape: s.shape.clone(),
                pruned: k.iter().filter(|&&b| !b).count(),
                keep: k,
            })
            .collect(),
    })
}

/// Zeroes the dropped weights. Everything else is left bitwise intact.
pub fn apply_mask(model: &ModelGraph, mask: &PruneMask) -> Result<ModelGraph> {
    let mut out = model.clone();
    for t in &mask.tensors {
        let layer = out
            .layers_mut()
            .get_mut(t.layer)
            .filter(|l| l.is_weight_layer())
            .ok_or_else(|| Error::Shape(format!("mask refers to layer {} which is not a weight layer", t.layer)))?;
        let (_, w) = layer.tensors_mut().swap_remove(0);
        if w.shape() != t.shape.as_slice() || t.keep.len() != w.len() {
            return Err(Error::Shape(format!(
                "layer {}: mask shape {:?} vs weight {:?}",
                t.layer,
                t.shape,
                w.shape()
            )));
        }
        for (v, &k) in w.data_mut().iter_mut().zip(&t.keep) {
            if !k {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRepair {
    Reset,
    Repair,
}

/// Restores activation statistics of a pruned model. `Reset` recomputes
/// batchnorm statistics; `Repair` moves every boundary back to the
/// statistics of the unpruned model.
pub fn post_prune_repair(
    pruned: &ModelGraph,
    original: &ModelGraph,
    data: &Dataset,
    mode: PruneRepair,
    config: &RenormConfig,
) -> Result<ModelGraph> {
    pruned.ensure_same_architecture(original)?;
    match mode {
        PruneRepair::Reset => {
            if !pruned.has_batchnorm() {
                return Err(Error::InvalidArgument("reset needs a model with batchnorm".into()));
            }
            reset_bn(pruned, &config.stats_data(data), config.batch_size)
        }
        PruneRepair::Repair => {
            let cfg = RenormConfig {
                mode: RenormMode::Repair,
                ..config.clone()
            };
            let goals = measure_stats(original, &cfg.stats_data(data), &cfg.plan()?, Mode::Eval, Phase::PreActivation, None)?;
            repair(pruned, &goals, data, &cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{ArchDescriptor, Dense, Layer, Norm};
    use crate::renorm::interpolate_elementwise;
    use crate::tensor::Tensor;
    use crate::train::{evaluate, init_params, train, InitScheme, LrSchedule, TrainConfig};

    fn single(values: Vec<f32>) -> ModelGraph {
        let n = values.len();
        let layers = vec![Layer::Dense(Dense {
            weight: Tensor::from_vec(&[1, n], values).unwrap(),
            bias: None,
        })];
        ModelGraph::from_layers(vec![n], layers).unwrap()
    }

    fn random_model(arch: &ArchDescriptor, seed: u64) -> ModelGraph {
        init_params(&ModelGraph::build(arch).unwrap(), InitScheme::KaimingUniform, seed)
    }

    #[test]
    fn magnitude_and_sort_oracle() {
        let m = single(vec![1.0, -2.0, 3.0, -4.0]);
        let s = score(&m, ScoreMethod::Magnitude, None, &ScoreOptions::default()).unwrap();
        assert_eq!(s.tensors[0].scores, vec![1.0, 2.0, 3.0, 4.0]);
        let half = mask_from_scores(&s, 0.5, Granularity::Global).unwrap();
        assert_eq!(half.tensors[0].keep, vec![false, false, true, true]);
        assert!(mask_from_scores(&s, 0.0, Granularity::Global).unwrap().tensors[0].keep.iter().all(|&k| k));
        assert!(mask_from_scores(&s, 1.0, Granularity::Global).unwrap().tensors[0].keep.iter().all(|&k| !k));
        assert_eq!(
            mask_from_scores(&s, 0.5, Granularity::Layerwise).unwrap().tensors[0].keep,
            half.tensors[0].keep
        );
        assert!(mask_from_scores(&s, 1.5, Granularity::Global).is_err());
    }

    #[test]
    fn ties_break_by_tensor_then_index() {
        let s = ScoreMap {
            tensors: vec![
                ScoreTensor { layer: 0, shape: vec![3], scores: vec![1.0, 1.0, 1.0] },
                ScoreTensor { layer: 2, shape: vec![2], scores: vec![1.0, 0.5] },
            ],
        };
        let m = mask_from_scores(&s, 0.6, Granularity::Global).unwrap();
        assert_eq!(m.tensors[1].keep, vec![true, false]);
        assert_eq!(m.tensors[0].keep, vec![false, false, true]);
    }

    #[test]
    fn exact_counts_and_untouched_biases() {
        let arch = ArchDescriptor::mlp_with(&[10], &[20, 15], 4, Norm::Batch, true);
        let m = random_model(&arch, 0);
        let s = score(&m, ScoreMethod::Magnitude, None, &ScoreOptions::default()).unwrap();
        for sp in [0.0, 0.1, 0.33, 0.8, 0.99, 1.0] {
            let mask = mask_from_scores(&s, sp, Granularity::Global).unwrap();
            assert_eq!(mask.pruned(), (sp * mask.total() as f64).floor() as usize);
            let p = apply_mask(&m, &mask).unwrap();
            for ((_, role, a), (_, _, b)) in p.params().iter().zip(m.params()) {
                if *role != ParamRole::Weight {
                    assert_eq!(*a, b);
                }
            }
            if sp == 0.0 {
                assert_eq!(p, m);
            }
        }
        let ex = score(&m, ScoreMethod::Magnitude, None, &ScoreOptions { exempt_first: true, ..Default::default() }).unwrap();
        assert_eq!(ex.tensors.len(), 2);
    }

    #[test]
    fn pruning_is_a_parameter_wise_interpolation() {
        let archs = [
            ArchDescriptor::mlp_with(&[10], &[20, 15], 4, Norm::Batch, true),
            ArchDescriptor::vgg([2, 6, 6], &[Some(4), None, Some(5)], 3, Norm::Layer),
        ];
        for (k, arch) in archs.iter().enumerate() {
            let m = random_model(arch, k as u64);
            let s = score(&m, ScoreMethod::Magnitude, None, &ScoreOptions::default()).unwrap();
            for g in [Granularity::Global, Granularity::Layerwise] {
                let mask = mask_from_scores(&s, 0.7, g).unwrap();
                let pruned = apply_mask(&m, &mask).unwrap();
                let slot_of: Vec<Option<usize>> = m
                    .params()
                    .iter()
                    .map(|(l, r, _)| if *r == ParamRole::Weight { mask.tensors.iter().position(|t| t.layer == *l) } else { None })
                    .collect();
                let mixed = interpolate_elementwise(&m, &pruned, |t, i| match slot_of[t] {
                    Some(j) if !mask.tensors[j].keep[i] => 1.0,
                    _ => 0.5,
                })
                .unwrap();
                assert_eq!(mixed.to_checkpoint_bytes(), pruned.to_checkpoint_bytes());
            }
        }
    }

    #[test]
    fn fisher_matches_analytic_gradient() {
        // logits z = W x, one sample of class c: ∂L/∂W[k][j] = (p_k − [k = c])·x_j
        let layers = vec![Layer::Dense(Dense {
            weight: Tensor::from_vec(&[3, 2], vec![0.2, -0.4, 0.1, 0.3, -0.5, 0.6]).unwrap(),
            bias: None,
        })];
        let m = ModelGraph::from_layers(vec![2], layers).unwrap();
        let x = [1.5f64, -0.5];
        let data = Dataset::new(Tensor::from_vec(&[1, 2], vec![1.5, -0.5]).unwrap(), vec![2], 3, crate::data::Split::Train).unwrap();
        let f = diag_fisher(&m, &data, None).unwrap();
        let w = weight_of(&m, 0).data();
        let z: Vec<f64> = (0..3).map(|k| w[k * 2] as f64 * x[0] + w[k * 2 + 1] as f64 * x[1]).collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let sum: f64 = e.iter().sum();
        for k in 0..3 {
            for j in 0..2 {
                let g = (e[k] / sum - if k == 2 { 1.0 } else { 0.0 }) * x[j];
                assert!((f[0].scores[k * 2 + j] - g * g).abs() <= 1e-6 * (g * g).max(1e-3), "{} vs {}", f[0].scores[k * 2 + j], g * g);
            }
        }
        let s = score(&m, ScoreMethod::DiagFisher, Some(&data), &ScoreOptions::default()).unwrap();
        assert!((s.tensors[0].scores[1] - f[0].scores[1] * (w[1] as f64).powi(2)).abs() < 1e-12);
        assert!(score(&m, ScoreMethod::DiagFisher, None, &ScoreOptions::default()).is_err());
    }

    #[test]
    fn zero_model_has_zero_fisher() {
        let m = ModelGraph::build(&ArchDescriptor::mlp(&[4], &[6], 3)).unwrap();
        let data = synth_blobs(0, 32, 4, 3, 1.0).unwrap();
        for t in diag_fisher(&m, &data, None).unwrap() {
            assert!(t.scores.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bitmask_roundtrip() {
        let m = random_model(&ArchDescriptor::mlp(&[7], &[9], 3), 2);
        let s = score(&m, ScoreMethod::Magnitude, None, &ScoreOptions::default()).unwrap();
        let mask = mask_from_scores(&s, 0.45, Granularity::Layerwise).unwrap();
        let dir = tempfile::tempdir().unwrap();
        mask.save(dir.path(), "mask").unwrap();
        assert_eq!(PruneMask::load(dir.path(), "mask").unwrap(), mask);
        std::fs::write(dir.path().join("scores.json"), serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(ScoreMap::load(dir.path().join("scores.json")).unwrap(), s);
    }

    #[test]
    fn repairs_after_pruning() {
        let data = synth_blobs(3, 1024, 8, 4, 0.5).unwrap();
        let mut cfg = TrainConfig::new(LrSchedule::constant(0.05), 3, 1);
        cfg.batch_size = 32;
        let plain = train(random_model(&ArchDescriptor::mlp(&[8], &[32, 32], 4), 1), &data, &cfg).unwrap().0;
        let rc = RenormConfig::default();

        let s = score(&plain, ScoreMethod::Magnitude, None, &ScoreOptions::default()).unwrap();
        let none = apply_mask(&plain, &mask_from_scores(&s, 0.0, Granularity::Global).unwrap()).unwrap();
        let fixed = post_prune_repair(&none, &plain, &data, PruneRepair::Repair, &rc).unwrap();
        let (a0, a1) = (evaluate(&plain, &data, 256).unwrap().accuracy, evaluate(&fixed, &data, 256).unwrap().accuracy);
        assert!((a0 - a1).abs() <= 0.005);
        assert!(post_prune_repair(&none, &plain, &data, PruneRepair::Reset, &rc).is_err());

        let pruned = apply_mask(&plain, &mask_from_scores(&s, 0.6, Granularity::Global).unwrap()).unwrap();
        let fixed = post_prune_repair(&pruned, &plain, &data, PruneRepair::Repair, &rc).unwrap();
        let folded = fixed.fold_affine().unwrap();
        assert!(!folded.has_affine());
        let (y0, y1) = (fixed.forward(data.inputs(), Mode::Eval).unwrap(), folded.forward(data.inputs(), Mode::Eval).unwrap());
        let diff = y0.data().iter().zip(y1.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5, "{diff}");
    }
}
