//! Command-line driver behind the `rebasin` binary.
//!
//! Every run writes into a fresh numbered directory under `--out`
//! (`train-000`, `train-001`, ...) holding the effective `config.json` and
//! all reports and checkpoints. Existing directories are never touched.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_mnist, BlobSpec, Dataset, Split, Standardize};
use crate::diag::{channel_probe, fisher_per_layer, l2_distance, retrain_probe, weight_magnitudes, RetrainOptions};
use crate::error::{Error, Result};
use crate::lap::{solve_lap, Sense};
use crate::matching::{
    activation_match_with, apply_perm, average_models, multi_match, weight_match_with, ActivationMatchOptions, Matcher, Strategy,
    WeightMatchOptions, ITERATIVE_CAP,
};
use crate::nn::{load_checkpoint, save_checkpoint, ArchDescriptor, ModelGraph};
use crate::prune::{
    apply_mask, mask_from_scores, post_prune_repair, score, Granularity, PruneRepair, ScoreMap, ScoreMethod, ScoreOptions,
};
use crate::renorm::{eval_curve, goal_stats, interpolate, lambda_grid, quick_grid, renormalize, RenormConfig, RenormMode};
use crate::train::{evaluate, init_params, train_eval, LrSchedule, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX files (optionally gzipped) in `dir`.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_samples: Option<usize>,
        #[serde(default)]
        test_samples: Option<usize>,
    },
    Blobs {
        seed: u64,
        dims: usize,
        classes: usize,
        spread: f64,
        train_samples: usize,
        test_samples: usize,
        /// Reshape each sample, e.g. `[1, 4, 4]` for a conv net.
        #[serde(default)]
        feature_shape: Option<Vec<usize>>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Mnist {
            dir: PathBuf::from("data/mnist"),
            train_samples: None,
            test_samples: None,
        }
    }
}

impl DataConfig {
    /// Train and test splits, standardized with the training constants.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = match self {
            DataConfig::Mnist {
                dir,
                train_samples,
                test_samples,
            } => {
                let cut = |d: Dataset, n: &Option<usize>| match n {
                    Some(n) if *n < d.len() => d.take(*n),
                    _ => d,
                };
                (
                    cut(load_mnist(dir, Split::Train)?, train_samples),
                    cut(load_mnist(dir, Split::Test)?, test_samples),
                )
            }
            DataConfig::Blobs {
                seed,
                dims,
                classes,
                spread,
                train_samples,
                test_samples,
                feature_shape,
            } => {
                let spec = BlobSpec {
                    seed: *seed,
                    dims: *dims,
                    classes: *classes,
                    spread: *spread,
                };
                let (mut a, mut b) = (spec.generate(*train_samples, Split::Train)?, spec.generate(*test_samples, Split::Test)?);
                if let Some(shape) = feature_shape {
                    a = a.with_feature_shape(shape)?;
                    b = b.with_feature_shape(shape)?;
                }
                (a, b)
            }
        };
        let consts = train.standardize(&Standardize::PerSplit)?.expect("per-split constants");
        test.standardize(&Standardize::Fixed(consts))?;
        Ok((train, test))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    #[default]
    Weight,
    Activation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub method: MatchMethod,
    pub weight: WeightMatchOptions,
    pub activation: ActivationMatchOptions,
}

impl MatcherConfig {
    fn matcher<'a>(&self, data: &'a Dataset) -> Matcher<'a> {
        match self.method {
            MatchMethod::Weight => Matcher::Weight(self.weight.clone()),
            MatchMethod::Activation => Matcher::Activation {
                data,
                opts: self.activation.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    pub strategy: Strategy,
    pub iter_cap: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            strategy: Strategy::Reference,
            iter_cap: ITERATIVE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub method: ScoreMethod,
    pub sparsity: Vec<f64>,
    pub granularity: Granularity,
    pub score: ScoreOptions,
    /// Precomputed scores (JSON `ScoreMap`) used instead of `method`.
    pub scores: Option<PathBuf>,
    pub repair: Vec<PruneRepair>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            method: ScoreMethod::Magnitude,
            sparsity: vec![0.5],
            granularity: Granularity::Global,
            score: ScoreOptions::default(),
            scores: None,
            repair: vec![PruneRepair::Repair],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub batch_size: usize,
    pub fisher_samples: Option<usize>,
    /// Run the retraining probe on every model.
    pub retrain: Option<RetrainOptions>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            batch_size: 256,
            fisher_samples: Some(1000),
            retrain: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LapConfig {
    /// JSON file holding a square matrix as an array of rows.
    pub cost: Option<PathBuf>,
    pub maximize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub arch: Option<ArchDescriptor>,
    pub train: TrainConfig,
    /// One model is trained per seed.
    pub seeds: Vec<u64>,
    /// Input checkpoints for every subcommand except `train` and `lap`.
    pub models: Vec<PathBuf>,
    pub matcher: MatcherConfig,
    /// Align the second model to the first before interpolating.
    pub match_first: bool,
    pub renorm: RenormConfig,
    pub grid_points: usize,
    pub quick: bool,
    /// Interpolation weight for `renorm`.
    pub lambda: f64,
    pub merge: MergeConfig,
    pub prune: PruneConfig,
    pub probe: ProbeConfig,
    pub lap: LapConfig,
    pub eval_batch_size: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            arch: None,
            train: TrainConfig::new(LrSchedule::constant(0.05), 3, 0),
            seeds: vec![0],
            models: Vec::new(),
            matcher: MatcherConfig::default(),
            match_first: false,
            renorm: RenormConfig::default(),
            grid_points: crate::renorm::DEFAULT_GRID_POINTS,
            quick: false,
            lambda: 0.5,
            merge: MergeConfig::default(),
            prune: PruneConfig::default(),
            probe: ProbeConfig::default(),
            lap: LapConfig::default(),
            eval_batch_size: 512,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.quick {
            Ok(quick_grid())
        } else {
            lambda_grid(self.grid_points)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rebasin", version, about = "Permutation matching, interpolation and re-normalization of small networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Interpolate at {0, 0.5, 1} only.
    #[arg(long, global = true)]
    pub quick: bool,
    /// Re-normalization mode: none, reset, repair, rescale, rescale_avg, reshift.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Multi-model strategy: reference, sequential, iterative.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    #[arg(long, global = true)]
    pub sparsity: Option<f64>,
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    /// Input checkpoint (repeatable); replaces `models` from the config.
    #[arg(long = "model", global = true)]
    pub models: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one model per seed.
    Train,
    /// Align the second model to the first.
    Match,
    /// Loss/accuracy along the linear path between two models.
    Interp,
    /// Re-normalize the interpolated model at `lambda`.
    Renorm,
    /// Prune one model and repair its statistics.
    Prune,
    /// Align and average several models.
    Merge,
    /// Activation, distance and Fisher diagnostics.
    Probe,
    /// Solve an assignment problem from a JSON cost matrix.
    Lap,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Match => "match",
            Command::Interp => "interp",
            Command::Renorm => "renorm",
            Command::Prune => "prune",
            Command::Merge => "merge",
            Command::Probe => "probe",
            Command::Lap => "lap",
        }
    }
}

/// Config file plus flag overrides.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
        cfg.train.seed = s;
        cfg.matcher.weight.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.quick |= cli.quick;
    if let Some(m) = &cli.mode {
        cfg.renorm.mode = m.parse()?;
    }
    if let Some(s) = &cli.strategy {
        cfg.merge.strategy = s.parse()?;
    }
    if let Some(s) = cli.sparsity {
        cfg.prune.sparsity = vec![s];
    }
    if let Some(g) = cli.grid_points {
        cfg.grid_points = g;
    }
    if !cli.models.is_empty() {
        cfg.models = cli.models.clone();
    }
    Ok(cfg)
}

/// Creates `<out>/<name>-NNN` with the first free index.
pub fn new_run_dir(out: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    for i in 0..100_000 {
        let dir = out.join(format!("{name}-{i:03}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::InvalidArgument(format!("no free run directory under {}", out.display())))
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn models(cfg: &ExperimentConfig, min: usize) -> Result<Vec<ModelGraph>> {
    if cfg.models.len() < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} model checkpoint(s), got {}",
            cfg.models.len()
        )));
    }
    cfg.models.iter().map(load_checkpoint).collect()
}

/// Executes one subcommand into a fresh run directory, which is returned.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = new_run_dir(&cfg.out, command.name())?;
    write_json(dir.join("config.json"), cfg)?;
    log::info!("{} → {}", command.name(), dir.display());
    let bs = cfg.eval_batch_size;
    match command {
        Command::Train => {
            let arch = cfg.arch.as_ref().ok_or_else(|| Error::InvalidArgument("train needs `arch`".into()))?;
            let (train, test) = cfg.data.load()?;
            let mut summary = Vec::new();
            for &seed in &cfg.seeds {
                let mut tc = cfg.train.clone();
                tc.seed = seed;
                let model = init_params(&ModelGraph::build(arch)?, tc.init, seed);
                let (model, log) = train_eval(model, &train, Some(&test), &tc)?;
                let sub = dir.join(format!("seed-{seed}"));
                std::fs::create_dir(&sub)?;
                log.save(&sub)?;
                save_checkpoint(&model, dir.join(format!("model-{seed}.rbnc")))?;
                let last = log.epochs.last();
                summary.push(serde_json::json!({
                    "seed": seed,
                    "checkpoint": format!("model-{seed}.rbnc"),
                    "train_acc": last.map(|e| e.train_acc),
                    "test_acc": last.and_then(|e| e.test_acc),
                }));
                println!("seed {seed}: test acc {:.4}", last.and_then(|e| e.test_acc).unwrap_or(f64::NAN));
            }
            write_json(dir.join("summary.json"), &summary)?;
        }
        Command::Match => {
            let ms = models(cfg, 2)?;
            let (train, test) = cfg.data.load()?;
            let (perm, report) = match cfg.matcher.method {
                MatchMethod::Weight => weight_match_with(&ms[0], &ms[1], &cfg.matcher.weight)?,
                MatchMethod::Activation => activation_match_with(&ms[0], &ms[1], &train, &cfg.matcher.activation)?,
            };
            let matched = apply_perm(&ms[1], &perm)?;
            save_checkpoint(&matched, dir.join("matched.rbnc"))?;
            write_json(dir.join("perm.json"), &perm)?;
            write_json(dir.join("report.json"), &report)?;
            let before = evaluate(&interpolate(&ms[0], &ms[1], 0.5)?, &test, bs)?.accuracy;
            let after = evaluate(&interpolate(&ms[0], &matched, 0.5)?, &test, bs)?.accuracy;
            write_json(dir.join("midpoint.json"), &serde_json::json!({"unmatched_test_acc": before, "matched_test_acc": after}))?;
            println!(
                "distance {:.4} → {:.4}; midpoint test acc {:.4} → {:.4}",
                report.distance_before, report.distance_after, before, after
            );
        }
        Command::Interp | Command::Renorm => {
            let ms = models(cfg, 2)?;
            let (train, test) = cfg.data.load()?;
            let b = if cfg.match_first {
                let (perm, _) = cfg.matcher.matcher(&train).run(&ms[0], &ms[1])?;
                write_json(dir.join("perm.json"), &perm)?;
                apply_perm(&ms[1], &perm)?
            } else {
                ms[1].clone()
            };
            if command == Command::Interp {
                let report = eval_curve(&ms[0], &b, &cfg.grid()?, &train, &test, &cfg.renorm)?;
                report.save(&dir)?;
                for p in &report.points {
                    println!("λ={:.2}  test acc {:.4}  test loss {:.4}", p.lambda, p.test_acc, p.test_loss);
                }
                println!("barrier: test acc {:.4}, test loss {:.4}", report.barrier.test_acc, report.barrier.test_loss);
            } else {
                let mid = interpolate(&ms[0], &b, cfg.lambda)?;
                let goals = if cfg.renorm.mode.uses_goals() {
                    Some(goal_stats(&ms[0], &b, cfg.lambda, &train, &cfg.renorm)?)
                } else {
                    None
                };
                let fixed = renormalize(&mid, goals.as_ref(), &train, &cfg.renorm)?;
                save_checkpoint(&fixed, dir.join("renormalized.rbnc"))?;
                let (before, after) = (evaluate(&mid, &test, bs)?, evaluate(&fixed, &test, bs)?);
                write_json(
                    dir.join("report.json"),
                    &serde_json::json!({
                        "lambda": cfg.lambda,
                        "mode": cfg.renorm.mode,
                        "before": {"test_acc": before.accuracy, "test_loss": before.loss},
                        "after": {"test_acc": after.accuracy, "test_loss": after.loss},
                    }),
                )?;
                println!("{}: test acc {:.4} → {:.4}", cfg.renorm.mode.name(), before.accuracy, after.accuracy);
            }
        }
        Command::Prune => {
            let ms = models(cfg, 1)?;
            let (train, test) = cfg.data.load()?;
            let model = &ms[0];
            let scores = match &cfg.prune.scores {
                Some(p) => ScoreMap::load(p)?,
                None => score(model, cfg.prune.method, Some(&train), &cfg.prune.score)?,
            };
            let base = evaluate(model, &test, bs)?.accuracy;
            let mut rows = Vec::new();
            for &s in &cfg.prune.sparsity {
                let mask = mask_from_scores(&scores, s, cfg.prune.granularity)?;
                let stem = format!("mask-{s}");
                mask.save(&dir, &stem)?;
                let pruned = apply_mask(model, &mask)?;
                let acc = evaluate(&pruned, &test, bs)?.accuracy;
                let mut row = serde_json::json!({"sparsity": s, "achieved": mask.achieved_sparsity(), "dense_test_acc": base, "pruned_test_acc": acc});
                println!("s={s}: test acc {base:.4} → {acc:.4}");
                for &r in &cfg.prune.repair {
                    let rc = RenormConfig {
                        mode: match r {
                            PruneRepair::Reset => RenormMode::Reset,
                            PruneRepair::Repair => RenormMode::Repair,
                        },
                        ..cfg.renorm.clone()
                    };
                    let fixed = post_prune_repair(&pruned, model, &train, r, &rc)?;
                    let facc = evaluate(&fixed, &test, bs)?.accuracy;
                    let key = rc.mode.name();
                    row[format!("{key}_test_acc")] = facc.into();
                    save_checkpoint(&fixed, dir.join(format!("pruned-{s}-{key}.rbnc")))?;
                    println!("  {key}: {facc:.4}");
                }
                save_checkpoint(&pruned, dir.join(format!("pruned-{s}.rbnc")))?;
                rows.push(row);
            }
            write_json(dir.join("report.json"), &rows)?;
        }
        Command::Merge => {
            let ms = models(cfg, 2)?;
            let (train, test) = cfg.data.load()?;
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let out = multi_match(&ms, cfg.merge.strategy, &cfg.matcher.matcher(&train), cfg.merge.iter_cap, seed)?;
            save_checkpoint(&out.merged, dir.join("merged.rbnc"))?;
            write_json(dir.join("perms.json"), &out.perms)?;
            let ends: Vec<f64> = ms.iter().map(|m| evaluate(m, &test, bs).map(|r| r.accuracy)).collect::<Result<_>>()?;
            let unmatched = evaluate(&average_models(&ms)?, &test, bs)?.accuracy;
            let merged = evaluate(&out.merged, &test, bs)?.accuracy;
            write_json(
                dir.join("report.json"),
                &serde_json::json!({
                    "strategy": cfg.merge.strategy,
                    "iterations": out.iterations,
                    "converged": out.converged,
                    "end_test_acc": ends,
                    "unmatched_average_test_acc": unmatched,
                    "merged_test_acc": merged,
                }),
            )?;
            println!(
                "{:?}: {} iteration(s); merged {merged:.4}, unmatched {unmatched:.4}, mean end {:.4}",
                cfg.merge.strategy,
                out.iterations,
                ends.iter().sum::<f64>() / ends.len() as f64
            );
        }
        Command::Probe => {
            let ms = models(cfg, 1)?;
            let (train, test) = cfg.data.load()?;
            for (i, m) in ms.iter().enumerate() {
                let sub = dir.join(format!("model-{i}"));
                std::fs::create_dir(&sub)?;
                channel_probe(m, &train, cfg.probe.batch_size)?.save(&sub)?;
                write_json(sub.join("weights.json"), &weight_magnitudes(m))?;
                write_json(sub.join("fisher.json"), &fisher_per_layer(m, &train, cfg.probe.fisher_samples)?)?;
                if let Some(opts) = &cfg.probe.retrain {
                    let r = retrain_probe(m, &train, Some(&test), opts)?;
                    write_json(sub.join("retrain.json"), &r)?;
                    println!("model {i}: {} mini-batches to target (reached: {})", r.steps, r.reached);
                }
            }
            if ms.len() >= 2 {
                let d = serde_json::json!({
                    "l2": l2_distance(&ms[0], &ms[1], false)?,
                    "l2_with_norm_stats": l2_distance(&ms[0], &ms[1], true)?,
                });
                println!("distance {d}");
                write_json(dir.join("distance.json"), &d)?;
            }
        }
        Command::Lap => {
            let path = cfg.lap.cost.as_ref().ok_or_else(|| Error::InvalidArgument("lap needs `lap.cost`".into()))?;
            let cost: Vec<Vec<f64>> =
                serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::parse(path, e.to_string()))?;
            let sense = if cfg.lap.maximize { Sense::Maximize } else { Sense::Minimize };
            let a = solve_lap(&cost, sense)?;
            write_json(dir.join("assignment.json"), &a)?;
            println!("{}", serde_json::to_string(&a)?);
        }
    }
    Ok(dir)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("REBASIN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let cli = Cli::parse();
    match resolve(&cli).and_then(|cfg| execute(cli.command, &cfg)) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
