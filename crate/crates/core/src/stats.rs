//! Per-channel activation statistics in double precision.
//!
//! Every sample position counts as one observation of its channel: for conv
//! activations `[N, C, H, W]` that is `N·H·W` observations per channel.
//! Batches are combined with the pairwise update of Chan et al., which gives
//! the same population moments as a two-pass computation over all samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::ops::{channel_layout, channel_moments};
use crate::nn::{Mode, ModelGraph, Phase, TapRequest};
use crate::tensor::{dgemm, Tensor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    batches: usize,
}

impl Moments {
    pub fn add_batch(&mut self, x: &Tensor) {
        let (n, _, s) = channel_layout(x);
        let (mean, var) = channel_moments(x);
        let nb = (n * s) as f64;
        let m2 = var.iter().map(|v| v * nb).collect();
        self.merge(&Moments {
            count: nb,
            mean,
            m2,
            batches: 1,
        });
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * other.count / n;
            self.m2[c] += other.m2[c] + delta * delta * self.count * other.count / n;
        }
        self.count = n;
        self.batches += other.batches;
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance.
    pub fn var(&self) -> Vec<f64> {
        self.m2.iter().map(|m| m / self.count).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.var().iter().map(|v| v.sqrt()).collect()
    }
}

/// Joint moments of two activation tensors with matching sample layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrossMoments {
    a: Moments,
    b: Moments,
    /// `[ca × cb]` co-moment Σ(x−μ)(y−ν).
    co: Vec<f64>,
}

impl CrossMoments {
    pub fn add_batch(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        let (n, ca, s) = channel_layout(a);
        let (nb, cb, sb) = channel_layout(b);
        if n != nb || s != sb {
            return Err(Error::Shape(format!(
                "activation layouts differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut ma = Moments::default();
        ma.add_batch(a);
        let mut mb = Moments::default();
        mb.add_batch(b);
        let ac = centered(a, ma.mean());
        let bc = centered(b, mb.mean());
        let mut co = vec![0.0f64; ca * cb];
        for i in 0..n {
            dgemm(
                ca,
                s,
                cb,
                1.0,
                &ac[i * ca * s..(i + 1) * ca * s],
                (s, 1),
                &bc[i * cb * s..(i + 1) * cb * s],
                (1, s),
                1.0,
                &mut co,
                (cb, 1),
            );
        }
        self.merge(CrossMoments { a: ma, b: mb, co });
        Ok(())
    }

    pub fn merge(&mut self, other: CrossMoments) {
        if other.a.count == 0.0 {
            return;
        }
        if self.a.count == 0.0 {
            *self = other;
            return;
        }
        let (na, nb) = (self.a.count, other.a.count);
        let w = na * nb / (na + nb);
        let cb = self.b.mean.len();
        for (i, row) in self.co.chunks_exact_mut(cb).enumerate() {
            let da = other.a.mean[i] - self.a.mean[i];
            for (j, v) in row.iter_mut().enumerate() {
                let db = other.b.mean[j] - self.b.mean[j];
                *v += other.co[i * cb + j] + da * db * w;
            }
        }
        self.a.merge(&other.a);
        self.b.merge(&other.b);
    }

    pub fn moments_a(&self) -> &Moments {
        &self.a
    }

    pub fn moments_b(&self) -> &Moments {
        &self.b
    }

    /// Population covariance, `[ca × cb]` row-major.
    pub fn covariance(&self) -> Vec<f64> {
        self.co.iter().map(|c| c / self.a.count).collect()
    }

    /// Pearson correlation `[ca × cb]`. A unit with zero variance on either
    /// side correlates 0 with everything; the dead units are returned as
    /// `(side, index)` with side 0 for `a`.
    pub fn correlation(&self) -> (Vec<f64>, Vec<(usize, usize)>) {
        let cb = self.b.mean.len();
        let (va, vb) = (&self.a.m2, &self.b.m2);
        let mut dead: Vec<(usize, usize)> = va.iter().enumerate().filter(|(_, &v)| v <= 0.0).map(|(i, _)| (0, i)).collect();
        dead.extend(vb.iter().enumerate().filter(|(_, &v)| v <= 0.0).map(|(j, _)| (1, j)));
        let corr = self
            .co
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let (i, j) = (k / cb, k % cb);
                if va[i] <= 0.0 || vb[j] <= 0.0 {
                    0.0
                } else {
                    c / (va[i] * vb[j]).sqrt()
                }
            })
            .collect();
        (corr, dead)
    }
}

fn centered(x: &Tensor, mean: &[f64]) -> Vec<f64> {
    let (n, c, s) = channel_layout(x);
    let mut out = Vec::with_capacity(x.len());
    let d = x.data();
    for i in 0..n {
        for (ch, &m) in mean.iter().enumerate().take(c) {
            let off = (i * c + ch) * s;
            out.extend(d[off..off + s].iter().map(|&v| v as f64 - m));
        }
    }
    out
}

/// Measured per-channel statistics of one boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryStats {
    pub boundary: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub batches: usize,
}

impl BoundaryStats {
    pub fn from_moments(boundary: usize, m: &Moments) -> Self {
        BoundaryStats {
            boundary,
            mean: m.mean().to_vec(),
            std: m.std(),
            batches: m.batches(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub phase: Phase,
    /// Sorted by boundary id.
    pub boundaries: Vec<BoundaryStats>,
}

impl ChannelStats {
    pub fn get(&self, boundary: usize) -> Option<&BoundaryStats> {
        self.boundaries.iter().find(|b| b.boundary == boundary)
    }

    pub fn require(&self, boundary: usize) -> Result<&BoundaryStats> {
        self.get(boundary)
            .ok_or_else(|| Error::MissingStats(format!("no statistics for boundary {boundary}")))
    }

    /// `(1−λ)·self + λ·other` for both mean and std, evaluated as
    /// `self + λ·(other − self)`.
    pub fn lerp(&self, other: &ChannelStats, lambda: f64) -> Result<ChannelStats> {
        if self.phase != other.phase || self.boundaries.len() != other.boundaries.len() {
            return Err(Error::BoundaryMismatch("statistics cover different boundaries".into()));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + lambda * (y - x)).collect() };
        let boundaries = self
            .boundaries
            .iter()
            .zip(&other.boundaries)
            .map(|(a, b)| {
                if a.boundary != b.boundary || a.mean.len() != b.mean.len() {
                    return Err(Error::BoundaryMismatch(format!(
                        "boundary {} ({} channels) vs {} ({} channels)",
                        a.boundary,
                        a.mean.len(),
                        b.boundary,
                        b.mean.len()
                    )));
                }
                Ok(BoundaryStats {
                    boundary: a.boundary,
                    mean: mix(&a.mean, &b.mean),
                    std: mix(&a.std, &b.std),
                    batches: a.batches.min(b.batches),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ChannelStats {
            phase: self.phase,
            boundaries,
        })
    }
}

/// Maps every batch in parallel and merges the results strictly in batch
/// order, so the outcome does not depend on the thread count.
pub(crate) fn fold_batches<T, A>(
    data: &Dataset,
    plan: &BatchPlan,
    mut acc: A,
    map: impl Fn(Batch) -> Result<T> + Sync,
    mut merge: impl FnMut(&mut A, T),
) -> Result<A>
where
    T: Send,
{
    let batches = data.batch_indices(plan, 0);
    if batches.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} samples give no batch of size {}",
            data.len(),
            plan.batch_size
        )));
    }
    let group = rayon::current_num_threads().max(1) * 2;
    for chunk in batches.chunks(group) {
        let parts: Vec<Result<T>> = chunk.par_iter().map(|idx| map(data.gather(idx))).collect();
        for p in parts {
            merge(&mut acc, p?);
        }
    }
    Ok(acc)
}

/// Measures per-channel statistics at the requested boundaries (all of them
/// when `boundaries` is `None`).
pub fn measure_stats(
    model: &ModelGraph,
    data: &Dataset,
    plan: &BatchPlan,
    mode: Mode,
    phase: Phase,
    boundaries: Option<&[usize]>,
) -> Result<ChannelStats> {
    let ids: Vec<usize> = match boundaries {
        Some(b) => b.to_vec(),
        None => model.boundaries().iter().map(|b| b.id).collect(),
    };
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let request = TapRequest::only(&sorted, phase);
    let acc = fold_batches(
        data,
        plan,
        vec![Moments::default(); sorted.len()],
        |batch| {
            let (_, taps) = model.forward_taps(&batch.inputs, mode, &request)?;
            Ok(taps
                .iter()
                .map(|t| {
                    let mut m = Moments::default();
                    m.add_batch(&t.tensor);
                    m
                })
                .collect::<Vec<_>>())
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(&part) {
                a.merge(p);
            }
        },
    )?;
    Ok(ChannelStats {
        phase,
        boundaries: sorted.iter().zip(&acc).map(|(&b, m)| BoundaryStats::from_moments(b, m)).collect(),
    })
}

/// Joint activation moments of two same-architecture models at every
/// boundary, from a single pass over the data.
pub fn cross_moments(
    model_a: &ModelGraph,
    model_b: &ModelGraph,
    data: &Dataset,
    plan: &BatchPlan,
    mode: Mode,
    phase: Phase,
) -> Result<Vec<CrossMoments>> {
    model_a.ensure_same_architecture(model_b)?;
    let request = TapRequest::all(phase);
    let nb = model_a.boundaries().len();
    fold_batches(
        data,
        plan,
        vec![CrossMoments::default(); nb],
        |batch| {
            let (_, ta) = model_a.forward_taps(&batch.inputs, mode, &request)?;
            let (_, tb) = model_b.forward_taps(&batch.inputs, mode, &request)?;
            ta.iter()
                .zip(&tb)
                .map(|(a, b)| {
                    let mut c = CrossMoments::default();
                    c.add_batch(&a.tensor, &b.tensor)?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.merge(p);
            }
        },
    )
}
