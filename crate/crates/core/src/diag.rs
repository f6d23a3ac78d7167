//! Read-only measurements: activation scales, zero fractions, parameter
//! distances, Fisher information, and the retraining probe.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelGraph, ParamRole, Phase, Probe};
use crate::prune::diag_fisher;
use crate::stats::{fold_batches, Moments};
use crate::tensor::Tensor;
use crate::train::{evaluate, LrSchedule, TrainConfig, Trainer};

/// "Scale" is the mean absolute activation; "std" is the per-channel
/// standard deviation averaged over channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProbe {
    pub boundary: usize,
    pub units: usize,
    pub pre_scale: f64,
    pub post_scale: f64,
    pub pre_std: f64,
    pub post_std: f64,
    /// Share of post-activation values that are exactly zero.
    pub zero_fraction: f64,
    /// Mean |w| of the producing layer's weights.
    pub weight_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub samples: usize,
    pub boundaries: Vec<BoundaryProbe>,
}

impl LayerProbe {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for b in &self.boundaries {
            out.serialize(b)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `probe.csv` and `probe.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.write_csv(std::fs::File::create(dir.join("probe.csv"))?)?;
        std::fs::write(dir.join("probe.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Default)]
struct PhaseAcc {
    abs_sum: f64,
    zeros: f64,
    moments: Moments,
}

impl PhaseAcc {
    fn add(&mut self, x: &Tensor) {
        self.abs_sum += x.data().iter().map(|&v| (v as f64).abs()).sum::<f64>();
        self.zeros += x.data().iter().filter(|&&v| v == 0.0).count() as f64;
        self.moments.add_batch(x);
    }

    fn merge(&mut self, other: &PhaseAcc) {
        self.abs_sum += other.abs_sum;
        self.zeros += other.zeros;
        self.moments.merge(&other.moments);
    }

    fn values(&self) -> f64 {
        self.moments.count() * self.moments.mean().len() as f64
    }
}

struct Capture {
    pre: Vec<PhaseAcc>,
    post: Vec<PhaseAcc>,
}

impl Probe for Capture {
    fn boundary(&mut self, boundary: usize, phase: Phase, x: &mut Tensor) -> Result<()> {
        match phase {
            Phase::PreActivation => self.pre[boundary].add(x),
            Phase::PostActivation => self.post[boundary].add(x),
        }
        Ok(())
    }
}

/// Eval-mode activation statistics at every boundary, streamed over
/// `data` in f64.
pub fn channel_probe(model: &ModelGraph, data: &Dataset, batch_size: usize) -> Result<LayerProbe> {
    let nb = model.boundaries().len();
    let empty = || Capture {
        pre: vec![PhaseAcc::default(); nb],
        post: vec![PhaseAcc::default(); nb],
    };
    let acc = fold_batches(
        data,
        &BatchPlan::eval(batch_size),
        empty(),
        |batch| {
            let mut cap = empty();
            model.forward_probed(&batch.inputs, Mode::Eval, &mut cap)?;
            Ok(cap)
        },
        |acc, part| {
            for (a, p) in acc.pre.iter_mut().zip(&part.pre) {
                a.merge(p);
            }
            for (a, p) in acc.post.iter_mut().zip(&part.post) {
                a.merge(p);
            }
        },
    )?;
    let mean_std = |m: &Moments| {
        let s = m.std();
        s.iter().sum::<f64>() / s.len().max(1) as f64
    };
    let boundaries = model
        .boundaries()
        .iter()
        .map(|b| {
            let (pre, post) = (&acc.pre[b.id], &acc.post[b.id]);
            let w = model.layers()[b.producer].tensors()[0].1;
            BoundaryProbe {
                boundary: b.id,
                units: b.units,
                pre_scale: pre.abs_sum / pre.values(),
                post_scale: post.abs_sum / post.values(),
                pre_std: mean_std(&pre.moments),
                post_std: mean_std(&post.moments),
                zero_fraction: post.zeros / post.values(),
                weight_scale: w.data().iter().map(|&v| (v as f64).abs()).sum::<f64>() / w.len() as f64,
            }
        })
        .collect();
    Ok(LayerProbe {
        samples: data.len(),
        boundaries,
    })
}

/// Euclidean distance over all learnable parameters, plus batchnorm running
/// statistics when `include_norm_stats` is set.
pub fn l2_distance(a: &ModelGraph, b: &ModelGraph, include_norm_stats: bool) -> Result<f64> {
    a.ensure_same_architecture(b)?;
    let mut sum = 0.0f64;
    for ((_, role, x), (_, _, y)) in a.params().iter().zip(b.params()) {
        if role.is_learnable() || (include_norm_stats && role.is_running_stat()) {
            sum += x.data().iter().zip(y.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>();
        }
    }
    Ok(sum.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: usize,
    pub value: f64,
}

/// Mean |w| per dense/conv layer.
pub fn weight_magnitudes(model: &ModelGraph) -> Vec<LayerStat> {
    model
        .params()
        .iter()
        .filter(|(_, r, _)| *r == ParamRole::Weight)
        .map(|(l, _, w)| LayerStat {
            layer: *l,
            value: w.data().iter().map(|&v| (v as f64).abs()).sum::<f64>() / w.len() as f64,
        })
        .collect()
}

/// Mean diagonal Fisher information per dense/conv layer.
pub fn fisher_per_layer(model: &ModelGraph, data: &Dataset, samples: Option<usize>) -> Result<Vec<LayerStat>> {
    Ok(diag_fisher(model, data, samples)?
        .into_iter()
        .map(|t| LayerStat {
            layer: t.layer,
            value: t.scores.iter().sum::<f64>() / t.scores.len() as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainOptions {
    pub target_train_acc: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub cap_epochs: usize,
    pub seed: u64,
    /// Mini-batches between accuracy checks.
    pub eval_every: u64,
    /// Training samples used for each accuracy check (all when `None`).
    pub eval_samples: Option<usize>,
    /// Keep training to the cap after the target is reached, checking only
    /// at epoch ends.
    pub run_to_cap: bool,
}

impl Default for RetrainOptions {
    fn default() -> Self {
        RetrainOptions {
            target_train_acc: 0.9,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            cap_epochs: 15,
            seed: 0,
            eval_every: 5,
            eval_samples: Some(5000),
            run_to_cap: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainPoint {
    pub steps: u64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrainReport {
    /// Mini-batches taken to reach the target, or the cap when not reached.
    pub steps: u64,
    pub reached: bool,
    pub cap: u64,
    pub curve: Vec<RetrainPoint>,
    #[serde(skip)]
    pub model: Option<ModelGraph>,
}

/// Retrains with a fixed small learning rate until training accuracy hits
/// the target, checking every `eval_every` mini-batches.
pub fn retrain_probe(model: &ModelGraph, train: &Dataset, test: Option<&Dataset>, opts: &RetrainOptions) -> Result<RetrainReport> {
    if opts.eval_every == 0 {
        return Err(Error::InvalidArgument("eval_every must be positive".into()));
    }
    let mut cfg = TrainConfig::new(LrSchedule::constant(opts.lr), opts.cap_epochs, opts.seed);
    cfg.momentum = opts.momentum;
    cfg.weight_decay = opts.weight_decay;
    cfg.batch_size = opts.batch_size;
    let plan = cfg.plan();
    let cap = (train.num_batches(&plan) * opts.cap_epochs) as u64;
    let probe_set = match opts.eval_samples {
        Some(n) if n < train.len() => train.take(n),
        _ => train.clone(),
    };
    let eval_bs = 512;
    let mut curve = Vec::new();
    let check = |m: &ModelGraph, steps: u64, curve: &mut Vec<RetrainPoint>| -> Result<bool> {
        let train_acc = evaluate(m, &probe_set, eval_bs)?.accuracy;
        let test_acc = test.map(|t| evaluate(m, t, eval_bs).map(|r| r.accuracy)).transpose()?;
        log::debug!("retrain probe: {steps} steps, train acc {train_acc:.4}");
        curve.push(RetrainPoint { steps, train_acc, test_acc });
        Ok(train_acc >= opts.target_train_acc)
    };
    let mut trainer = Trainer::new(model.clone(), &cfg)?;
    let mut reached_at = check(trainer.model(), 0, &mut curve)?.then_some(0);
    let per_epoch = train.num_batches(&plan) as u64;
    'outer: for epoch in 0..opts.cap_epochs {
        if reached_at.is_some() && !opts.run_to_cap {
            break;
        }
        for batch in train.batches(&plan, epoch as u64) {
            trainer.step(&batch)?;
            let steps = trainer.iteration();
            let due = match reached_at {
                None => steps % opts.eval_every == 0 || steps == cap,
                Some(_) => steps % per_epoch == 0,
            };
            if due && check(trainer.model(), steps, &mut curve)? && reached_at.is_none() {
                reached_at = Some(steps);
                if !opts.run_to_cap {
                    break 'outer;
                }
            }
        }
    }
    if reached_at.is_none() {
        log::warn!("retrain probe hit the cap of {cap} mini-batches below the target");
    }
    Ok(RetrainReport {
        steps: reached_at.unwrap_or(cap),
        reached: reached_at.is_some(),
        cap,
        curve,
        model: Some(trainer.finish().0),
    })
}
