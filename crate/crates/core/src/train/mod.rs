//! SGD training, initialization, learning-rate schedules and the recipes that
//! produce model pairs.

mod grad;
mod init;
mod schedule;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, ModelGraph, ParamRole, Phase};
use crate::stats::{fold_batches, BoundaryStats, ChannelStats};

pub(crate) use grad::softmax_xent;
pub use grad::{gradients, Gradients};
pub use init::{init_params, InitScheme, DENSE_NORMAL_STD};
pub use schedule::{lr_at, Decay, LrSchedule, WARMUP_START};

/// Loss above which training is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e4;
/// Key in [`ModelGraph::meta`] holding statistics recorded during training.
pub const RECORDED_STATS_KEY: &str = "recorded_stats";
const RECORD_MOMENTUM: f64 = 0.1;

fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    128
}
fn default_epochs() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stop early once this many iterations have run.
    #[serde(default)]
    pub max_iters: Option<u64>,
    /// Seeds initialization (when the caller initializes) and shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitScheme,
    /// Keep dense/conv biases fixed.
    #[serde(default)]
    pub freeze_biases: bool,
    /// Record a parameter snapshot every this many iterations.
    #[serde(default)]
    pub snapshot_every: Option<u64>,
    /// Track a running average of every boundary's pre-activation mean/std.
    #[serde(default)]
    pub track_boundary_stats: bool,
    /// Reserved; no augmentation is implemented.
    #[serde(default)]
    pub augment: bool,
}

impl TrainConfig {
    pub fn new(schedule: LrSchedule, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            schedule,
            momentum: default_momentum(),
            weight_decay: 0.0,
            batch_size: default_batch(),
            epochs,
            max_iters: None,
            seed,
            init: InitScheme::default(),
            freeze_biases: false,
            snapshot_every: None,
            track_boundary_stats: false,
            augment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay {} is negative", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.augment {
            return Err(Error::InvalidArgument("data augmentation is not supported".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            drop_last: true,
            shuffle_seed: Some(self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: u64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Fraction of samples classified correctly while training (train mode).
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub l2_norm: f64,
    /// Flattened learnable parameters.
    #[serde(skip)]
    pub params: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iters: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
    pub warning: Option<String>,
}

impl TrainLog {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.iters {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let last = self.iters.last();
        serde_json::json!({
            "iterations": last.map_or(0, |r| r.iteration + 1),
            "final_loss": last.map(|r| r.loss),
            "epochs": self.epochs,
            "snapshots": self.snapshots,
            "warning": self.warning,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.write_csv(std::fs::File::create(dir.join("train_log.csv"))?)?;
        std::fs::write(dir.join("train_summary.json"), serde_json::to_vec_pretty(&self.summary())?)?;
        Ok(())
    }
}

/// Flattened learnable parameters in [`ModelGraph::params`] order.
pub fn flat_params(model: &ModelGraph) -> Vec<f32> {
    model
        .params()
        .iter()
        .filter(|(_, r, _)| r.is_learnable())
        .flat_map(|(_, _, t)| t.data().iter().copied())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    pub correct: usize,
}

struct Recorder {
    /// (boundary, pre-activation layer)
    targets: Vec<(usize, usize)>,
    mean: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    batches: usize,
}

/// Step-level SGD with momentum. `θ ← θ − lr·v`, `v ← m·v + g + wd·θ`.
pub struct Trainer {
    model: ModelGraph,
    config: TrainConfig,
    velocity: Vec<Option<Vec<f32>>>,
    iteration: u64,
    log: TrainLog,
    recorder: Option<Recorder>,
}

impl Trainer {
    pub fn new(model: ModelGraph, config: &TrainConfig) -> Result<Self> {
        Self::resume(model, config, 0)
    }

    /// Continues the schedule from `iteration` with a fresh momentum buffer.
    pub fn resume(model: ModelGraph, config: &TrainConfig, iteration: u64) -> Result<Self> {
        config.validate()?;
        let velocity = model.params().iter().map(|(_, r, t)| r.is_learnable().then(|| vec![0.0; t.len()])).collect();
        let recorder = config.track_boundary_stats.then(|| Recorder {
            targets: model.boundaries().iter().map(|b| (b.id, b.pre_act)).collect(),
            mean: Vec::new(),
            std: Vec::new(),
            batches: 0,
        });
        Ok(Trainer {
            model,
            config: config.clone(),
            velocity,
            iteration,
            log: TrainLog::default(),
            recorder,
        })
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        let lr = lr_at(&self.config.schedule, self.iteration);
        let record: Vec<usize> = self.recorder.as_ref().map_or(Vec::new(), |r| r.targets.iter().map(|t| t.1).collect());
        let diverged = |loss: f64| Error::Diverged {
            iteration: self.iteration,
            loss,
        };
        let (logits, tape) = match grad::forward_tape(&self.model, &batch.inputs, Mode::Train, &record) {
            Ok(v) => v,
            Err(e) if e.is_numerical() => return Err(diverged(f64::NAN)),
            Err(e) => return Err(e),
        };
        let (loss, dlogits, correct) = softmax_xent(&logits, &batch.labels);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(diverged(loss));
        }
        let bn_batch = tape.bn_batch.clone();
        let recorded = tape.recorded.clone();
        let grads = grad::backward(&self.model, tape, dlogits);

        let (m, wd) = (self.config.momentum as f32, self.config.weight_decay as f32);
        let freeze = self.config.freeze_biases;
        for (k, (_, role, t)) in self.model.params_mut().into_iter().enumerate() {
            let (Some(v), Some(g)) = (self.velocity[k].as_mut(), grads.get(k)) else {
                continue;
            };
            if freeze && role == ParamRole::Bias {
                continue;
            }
            for ((p, v), &g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *v = m * *v + g + wd * *p;
                *p -= lr as f32 * *v;
            }
        }
        for (layer, stats) in self.model.layers_mut().iter_mut().zip(bn_batch) {
            if let (Layer::BatchNorm(bn), Some((mean, var, count))) = (layer, stats) {
                let mom = bn.momentum as f64;
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for c in 0..mean.len() {
                    let rm = &mut bn.running_mean.data_mut()[c];
                    *rm = ((1.0 - mom) * *rm as f64 + mom * mean[c]) as f32;
                    let rv = &mut bn.running_var.data_mut()[c];
                    *rv = ((1.0 - mom) * *rv as f64 + mom * var[c] * unbias) as f32;
                }
            }
        }
        if let Some(rec) = &mut self.recorder {
            let first = rec.batches == 0;
            for (slot, (_, mean, var)) in recorded.into_iter().enumerate() {
                let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
                if first {
                    rec.mean.push(mean);
                    rec.std.push(std);
                } else {
                    for (a, b) in rec.mean[slot].iter_mut().zip(&mean) {
                        *a = (1.0 - RECORD_MOMENTUM) * *a + RECORD_MOMENTUM * b;
                    }
                    for (a, b) in rec.std[slot].iter_mut().zip(&std) {
                        *a = (1.0 - RECORD_MOMENTUM) * *a + RECORD_MOMENTUM * b;
                    }
                }
            }
            rec.batches += 1;
        }
        self.log.iters.push(IterRecord {
            iteration: self.iteration,
            lr,
            loss,
        });
        if let Some(every) = self.config.snapshot_every {
            if every > 0 && self.iteration % every == 0 {
                let params = flat_params(&self.model);
                let l2_norm = params.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                self.log.snapshots.push(Snapshot {
                    iteration: self.iteration,
                    l2_norm,
                    params,
                });
            }
        }
        self.iteration += 1;
        Ok(StepStats { loss, lr, correct })
    }

    /// Runs epochs `start_epoch..config.epochs`, evaluating on `test` after
    /// each epoch when given.
    pub fn run_epochs(&mut self, data: &Dataset, test: Option<&Dataset>, start_epoch: usize) -> Result<()> {
        let plan = self.config.plan();
        if data.num_batches(&plan) == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples give no full batch of {}",
                data.len(),
                plan.batch_size
            )));
        }
        for epoch in start_epoch..self.config.epochs {
            let (mut loss_sum, mut correct, mut seen, mut steps) = (0.0, 0usize, 0usize, 0usize);
            for batch in data.batches(&plan, epoch as u64) {
                if self.config.max_iters.is_some_and(|cap| self.iteration >= cap) {
                    break;
                }
                let s = self.step(&batch)?;
                loss_sum += s.loss;
                correct += s.correct;
                seen += batch.len();
                steps += 1;
            }
            if steps == 0 {
                break;
            }
            let metrics = test.map(|t| evaluate(&self.model, t, 512)).transpose()?;
            self.log.epochs.push(EpochRecord {
                epoch,
                iterations: self.iteration,
                train_loss: loss_sum / steps as f64,
                train_acc: correct as f64 / seen as f64,
                test_loss: metrics.map(|m| m.loss),
                test_acc: metrics.map(|m| m.accuracy),
            });
            log::debug!("epoch {epoch}: loss {:.4} acc {:.4}", loss_sum / steps as f64, correct as f64 / seen as f64);
        }
        Ok(())
    }

    pub fn finish(mut self) -> (ModelGraph, TrainLog) {
        if let Some(rec) = self.recorder.take() {
            if rec.batches > 0 {
                let stats = ChannelStats {
                    phase: Phase::PreActivation,
                    boundaries: rec
                        .targets
                        .iter()
                        .zip(rec.mean.into_iter().zip(rec.std))
                        .map(|(&(boundary, _), (mean, std))| BoundaryStats {
                            boundary,
                            mean,
                            std,
                            batches: rec.batches,
                        })
                        .collect(),
                };
                self.model.meta.insert(
                    RECORDED_STATS_KEY.into(),
                    serde_json::to_value(stats).expect("stats serialize"),
                );
            }
        }
        (self.model, self.log)
    }
}

/// Statistics recorded while training with `track_boundary_stats`.
pub fn recorded_stats(model: &ModelGraph) -> Result<ChannelStats> {
    let v = model
        .meta
        .get(RECORDED_STATS_KEY)
        .ok_or_else(|| Error::MissingStats("model carries no statistics recorded during training".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::MissingStats(e.to_string()))
}

pub fn train(model: ModelGraph, data: &Dataset, config: &TrainConfig) -> Result<(ModelGraph, TrainLog)> {
    train_eval(model, data, None, config)
}

/// [`train`] with a per-epoch evaluation on `test`.
pub fn train_eval(model: ModelGraph, data: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<(ModelGraph, TrainLog)> {
    let mut t = Trainer::new(model, config)?;
    t.run_epochs(data, test, 0)?;
    Ok(t.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Eval-mode mean cross-entropy and accuracy over the whole dataset.
pub fn evaluate(model: &ModelGraph, data: &Dataset, batch_size: usize) -> Result<Metrics> {
    evaluate_with(data, batch_size, |x| model.forward(x, Mode::Eval))
}

pub(crate) fn evaluate_with(
    data: &Dataset,
    batch_size: usize,
    forward: impl Fn(&crate::tensor::Tensor) -> Result<crate::tensor::Tensor> + Sync,
) -> Result<Metrics> {
    let (loss, correct) = fold_batches(
        data,
        &BatchPlan::eval(batch_size),
        (0.0f64, 0usize),
        |b| {
            let logits = forward(&b.inputs)?;
            let (loss, _, correct) = softmax_xent(&logits, &b.labels);
            Ok((loss * b.len() as f64, correct))
        },
        |acc, (l, c)| {
            acc.0 += l;
            acc.1 += c;
        },
    )?;
    Ok(Metrics {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Trains a parent for `pretrain_epochs` of `config`, then two children
/// from the parent checkpoint with their own shuffle seeds for the rest of
/// the budget.
pub fn spawn_pair(
    init: ModelGraph,
    data: &Dataset,
    config: &TrainConfig,
    pretrain_epochs: usize,
    child_seeds: (u64, u64),
) -> Result<(ModelGraph, ModelGraph)> {
    let pre = pretrain_epochs.min(config.epochs);
    let mut parent_cfg = config.clone();
    parent_cfg.epochs = pre;
    let mut parent = Trainer::new(init, &parent_cfg)?;
    parent.run_epochs(data, None, 0)?;
    let start = parent.iteration();
    let (parent, _) = parent.finish();
    let child = |seed: u64| -> Result<ModelGraph> {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let mut t = Trainer::resume(parent.clone(), &cfg, start)?;
        t.run_epochs(data, None, pre)?;
        Ok(t.finish().0)
    };
    Ok((child(child_seeds.0)?, child(child_seeds.1)?))
}

/// Learning rate of the second phase of [`retrain_same_basin`].
pub const SMALL_LR: f64 = 0.01;

/// Continues training a solution at `config`'s base rate for
/// `big_lr_epochs`, then at 0.01 for `small_lr_epochs`.
pub fn retrain_same_basin(
    solution: &ModelGraph,
    data: &Dataset,
    config: &TrainConfig,
    big_lr_epochs: usize,
    small_lr_epochs: usize,
) -> Result<ModelGraph> {
    let mut model = solution.clone();
    for (epochs, lr) in [(big_lr_epochs, config.schedule.base_lr), (small_lr_epochs, SMALL_LR)] {
        if epochs == 0 {
            continue;
        }
        let mut cfg = config.clone();
        cfg.schedule = LrSchedule::constant(lr);
        cfg.epochs = epochs;
        cfg.max_iters = None;
        model = train(model, data, &cfg)?.0;
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: ModelGraph,
    pub train_acc: f64,
    pub epochs_run: usize,
    /// False when the epoch cap was hit below the 90% target.
    pub reached_target: bool,
}

pub const FINETUNE_TARGET: f64 = 0.9;

/// Zeroes and freezes every dense/conv bias, then fine-tunes (momentum 0.9,
/// no weight decay) until train accuracy reaches 90% or `max_epochs` runs out.
pub fn remove_bias_finetune(model: &ModelGraph, data: &Dataset, max_epochs: usize, lr: f64, seed: u64) -> Result<FinetuneOutcome> {
    let mut m = model.clone();
    for layer in m.layers_mut() {
        match layer {
            Layer::Dense(d) => {
                if let Some(b) = &mut d.bias {
                    b.data_mut().fill(0.0);
                }
            }
            Layer::Conv2d(c) => {
                if let Some(b) = &mut c.bias {
                    b.data_mut().fill(0.0);
                }
            }
            _ => {}
        }
    }
    let mut cfg = TrainConfig::new(LrSchedule::constant(lr), 1, seed);
    cfg.freeze_biases = true;
    let mut acc = evaluate(&m, data, 512)?.accuracy;
    let mut epochs_run = 0;
    let mut iteration = 0;
    while acc < FINETUNE_TARGET && epochs_run < max_epochs {
        cfg.epochs = epochs_run + 1;
        let mut t = Trainer::resume(m, &cfg, iteration)?;
        t.run_epochs(data, None, epochs_run)?;
        iteration = t.iteration();
        m = t.finish().0;
        epochs_run += 1;
        acc = evaluate(&m, data, 512)?.accuracy;
    }
    let reached_target = acc >= FINETUNE_TARGET;
    if !reached_target {
        log::warn!("bias-free fine-tuning stopped at {:.2}% train accuracy after {epochs_run} epochs", acc * 100.0);
    }
    Ok(FinetuneOutcome {
        model: m,
        train_acc: acc,
        epochs_run,
        reached_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::{ArchDescriptor, Dense};
    use crate::tensor::Tensor;

    fn blobs() -> Dataset {
        synth_blobs(7, 2000, 8, 4, 0.3).unwrap()
    }

    fn mlp(seed: u64) -> ModelGraph {
        let m = ModelGraph::build(&ArchDescriptor::mlp(&[8], &[32, 32], 4)).unwrap();
        init_params(&m, InitScheme::KaimingUniform, seed)
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let m = mlp(0);
        let mut cfg = TrainConfig::new(LrSchedule::constant(0.0), 2, 1);
        cfg.weight_decay = 5e-4;
        let (out, log) = train(m.clone(), &blobs(), &cfg).unwrap();
        assert_eq!(flat_params(&out), flat_params(&m));
        assert!(!log.iters.is_empty());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let mut cfg = TrainConfig::new(LrSchedule::constant(0.05), 5, 2);
        cfg.batch_size = 32;
        let data = blobs();
        let (m, _) = train(mlp(1), &data, &cfg).unwrap();
        assert!(evaluate(&m, &data, 256).unwrap().accuracy >= 0.99);
    }

    #[test]
    fn hand_computed_sgd_step() {
        // y = w·x + b, logits [y, 0]; one sample of class 1, one step without momentum
        let layers = vec![Layer::Dense(Dense {
            weight: Tensor::from_vec(&[2, 1], vec![0.5, 0.0]).unwrap(),
            bias: Some(Tensor::from_vec(&[2], vec![0.25, 0.0]).unwrap()),
        })];
        let m = ModelGraph::from_layers(vec![1], layers).unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let mut cfg = TrainConfig::new(LrSchedule::constant(0.1), 1, 0);
        cfg.momentum = 0.0;
        cfg.batch_size = 1;
        let mut t = Trainer::new(m, &cfg).unwrap();
        t.step(&Batch { inputs: x, labels: vec![1] }).unwrap();
        // p0 = σ(1.25); dL/dy0 = p0; dL/dw0 = 2·p0
        let p0 = 1.0 / (1.0 + (-1.25f64).exp());
        let Layer::Dense(d) = &t.model().layers()[0] else { panic!() };
        assert!((d.weight.data()[0] as f64 - (0.5 - 0.1 * 2.0 * p0)).abs() < 1e-7);
        assert!((d.bias.as_ref().unwrap().data()[0] as f64 - (0.25 - 0.1 * p0)).abs() < 1e-7);
        assert!((d.weight.data()[1] as f64 - 0.1 * 2.0 * p0).abs() < 1e-7);
    }

    #[test]
    fn reproducible_bits() {
        let cfg = TrainConfig::new(LrSchedule::constant(0.05), 2, 3);
        let a = train(mlp(4), &blobs(), &cfg).unwrap().0;
        let b = train(mlp(4), &blobs(), &cfg).unwrap().0;
        assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
    }

    #[test]
    fn divergence_names_iteration() {
        let cfg = TrainConfig::new(LrSchedule::constant(1e6), 3, 0);
        match train(mlp(0), &blobs(), &cfg) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration < 50),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn weight_decay_compresses() {
        let data = blobs();
        let run = |wd: f64| {
            let mut cfg = TrainConfig::new(LrSchedule::constant(0.05), 4, 5);
            cfg.weight_decay = wd;
            let p = flat_params(&train(mlp(6), &data, &cfg).unwrap().0);
            p.iter().map(|v| v.abs() as f64).sum::<f64>() / p.len() as f64
        };
        assert!(run(2e-3) < run(1e-3));
    }

    #[test]
    fn full_pretraining_gives_identical_children() {
        let cfg = TrainConfig::new(LrSchedule::constant(0.05), 2, 1);
        let (a, b) = spawn_pair(mlp(0), &blobs(), &cfg, 2, (10, 11)).unwrap();
        assert_eq!(a, b);
        let (a, b) = spawn_pair(mlp(0), &blobs(), &cfg, 1, (10, 11)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_retrain_is_identity() {
        let cfg = TrainConfig::new(LrSchedule::constant(0.05), 1, 1);
        let m = mlp(2);
        assert_eq!(retrain_same_basin(&m, &blobs(), &cfg, 0, 0).unwrap(), m);
    }

    #[test]
    fn bias_removal_zeroes_and_freezes() {
        let cfg = TrainConfig::new(LrSchedule::constant(0.05), 2, 1);
        let (m, _) = train(mlp(3), &blobs(), &cfg).unwrap();
        let out = remove_bias_finetune(&m, &blobs(), 3, 0.01, 0).unwrap();
        for (_, role, t) in out.model.params() {
            if role == ParamRole::Bias {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(out.reached_target);
    }

    #[test]
    fn tracked_stats_are_stored() {
        let mut cfg = TrainConfig::new(LrSchedule::constant(0.05), 1, 1);
        cfg.track_boundary_stats = true;
        let (m, _) = train(mlp(3), &blobs(), &cfg).unwrap();
        let s = recorded_stats(&m).unwrap();
        assert_eq!(s.boundaries.len(), 2);
        assert_eq!(s.boundaries[0].mean.len(), 32);
        let back = crate::nn::read_checkpoint(&m.to_checkpoint_bytes()[..]).unwrap();
        assert_eq!(recorded_stats(&back).unwrap(), s);
    }

    #[test]
    fn config_json() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"schedule":{"base_lr":0.1,"decay":{"kind":"constant"}}}"#).unwrap();
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.momentum, 0.9);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"schedule":{"base_lr":0.1,"decay":{"kind":"constant"}},"lr":1}"#).is_err());
        let mut bad = cfg.clone();
        bad.momentum = 1.0;
        assert!(bad.validate().is_err());
    }
}
