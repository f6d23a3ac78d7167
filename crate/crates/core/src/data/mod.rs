//! Datasets: IDX (MNIST) and CIFAR binary ingestion, a synthetic Gaussian
//! blob generator, standardization and deterministic batching.

mod cifar;
mod idx;
mod synth;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::channel_layout;
use crate::tensor::Tensor;

pub use cifar::load_cifar_bin;
pub use idx::{load_idx, load_mnist};
pub use synth::{synth_blobs, BlobSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// How to standardize inputs per channel (leading feature axis; for flat
/// feature vectors every feature is its own channel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Standardize {
    None,
    /// Use the mean/std of the dataset being loaded.
    #[default]
    PerSplit,
    Fixed(NormConstants),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Drop a short final batch, so every batch carries equal weight.
    pub drop_last: bool,
    /// `None` keeps dataset order.
    pub shuffle_seed: Option<u64>,
}

impl BatchPlan {
    /// Ordered, equal-size batches: the default for statistics passes.
    pub fn stats(batch_size: usize) -> Self {
        BatchPlan {
            batch_size,
            drop_last: true,
            shuffle_seed: None,
        }
    }

    /// Ordered batches keeping the remainder: for evaluation.
    pub fn eval(batch_size: usize) -> Self {
        BatchPlan {
            batch_size,
            drop_last: false,
            shuffle_seed: None,
        }
    }

    pub fn shuffled(batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            batch_size,
            drop_last: false,
            shuffle_seed: Some(seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::Shape(format!("inputs need a batch axis, got {:?}", inputs.shape())));
        }
        if labels.is_empty() || inputs.dim(0) != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} labels",
                inputs.dim(0),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if !inputs.all_finite() {
            return Err(Error::InvalidArgument("non-finite input value".into()));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, range: Range<usize>) -> Dataset {
        let idx: Vec<usize> = range.collect();
        let b = self.gather(&idx);
        Dataset {
            inputs: b.inputs,
            labels: b.labels,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        self.subset(0..n.min(self.len()))
    }

    pub fn with_feature_shape(self, shape: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            inputs: self.inputs.reshape(&full)?,
            ..self
        })
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let row = self.inputs.row_len();
        let mut data = Vec::with_capacity(idx.len() * row);
        let src = self.inputs.data();
        for &i in idx {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idx.len();
        Batch {
            inputs: Tensor::from_vec(&shape, data).expect("gathered rows match shape"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Sample indices of every batch for one epoch. Shuffling depends only on
    /// `(shuffle_seed, epoch)`.
    pub fn batch_indices(&self, plan: &BatchPlan, epoch: u64) -> Vec<Vec<usize>> {
        assert!(plan.batch_size > 0, "batch size must be positive");
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = plan.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
            order.shuffle(&mut rng);
        }
        order
            .chunks(plan.batch_size)
            .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn num_batches(&self, plan: &BatchPlan) -> usize {
        if plan.drop_last {
            self.len() / plan.batch_size
        } else {
            self.len().div_ceil(plan.batch_size)
        }
    }

    pub fn batches<'a>(&'a self, plan: &BatchPlan, epoch: u64) -> impl Iterator<Item = Batch> + 'a {
        self.batch_indices(plan, epoch)
            .into_iter()
            .map(move |idx| self.gather(&idx))
    }

    /// Per-channel mean and population std, computed in double precision.
    pub fn channel_stats(&self) -> NormConstants {
        let (mean, var) = crate::nn::ops::channel_moments(&self.inputs);
        NormConstants {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&v| v.sqrt() as f32).collect(),
        }
    }

    /// Standardizes in place; returns the constants that were applied.
    pub fn standardize(&mut self, how: &Standardize) -> Result<Option<NormConstants>> {
        let consts = match how {
            Standardize::None => return Ok(None),
            Standardize::PerSplit => self.channel_stats(),
            Standardize::Fixed(c) => c.clone(),
        };
        let (n, c, s) = channel_layout(&self.inputs);
        if consts.mean.len() != c || consts.std.len() != c {
            return Err(Error::InvalidArgument(format!(
                "normalization constants for {} channels, data has {c}",
                consts.mean.len()
            )));
        }
        if consts.std.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("normalization std must be positive".into()));
        }
        let data = self.inputs.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * s;
                let (m, sd) = (consts.mean[ch] as f64, consts.std[ch] as f64);
                for v in &mut data[off..off + s] {
                    *v = ((*v as f64 - m) / sd) as f32;
                }
            }
        }
        Ok(Some(consts))
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.feature_shape() != first.feature_shape() {
                return Err(Error::Shape("datasets differ in feature shape".into()));
            }
            data.extend_from_slice(p.inputs.data());
            labels.extend_from_slice(&p.labels);
        }
        let mut shape = first.inputs.shape().to_vec();
        shape[0] = labels.len();
        Dataset::new(Tensor::from_vec(&shape, data)?, labels, first.num_classes, first.split)
    }
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
