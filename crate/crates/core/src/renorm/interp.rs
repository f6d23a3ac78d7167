use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::ModelGraph;
use crate::stats::ChannelStats;
use crate::train::{evaluate, Metrics, RECORDED_STATS_KEY};

use super::{end_stats, renormalize, RenormConfig, RenormMode};

/// `(1−λ)·a + λ·b` over every tensor, running statistics and corrections
/// included.
pub fn interpolate(a: &ModelGraph, b: &ModelGraph, lambda: f64) -> Result<ModelGraph> {
    check_lambda(lambda)?;
    interpolate_elementwise(a, b, |_, _| lambda)
}

/// Interpolation with a coefficient per coordinate: `lambda(tensor, index)`
/// where `tensor` counts [`ModelGraph::params`] in order.
pub fn interpolate_elementwise(a: &ModelGraph, b: &ModelGraph, lambda: impl Fn(usize, usize) -> f64) -> Result<ModelGraph> {
    a.ensure_same_architecture(b)?;
    let mut out = a.clone();
    out.meta.remove(RECORDED_STATS_KEY);
    let theirs = b.params();
    for (k, ((_, _, t), (_, _, o))) in out.params_mut().into_iter().zip(theirs).enumerate() {
        for (i, (x, &y)) in t.data_mut().iter_mut().zip(o.data()).enumerate() {
            let l = lambda(k, i);
            let (p, q) = (*x as f64, y as f64);
            *x = (p + l * (q - p)) as f32;
        }
    }
    Ok(out)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("λ must lie in [0, 1], got {lambda}")))
    }
}

/// `points` evenly spaced values from 0 to 1.
pub fn lambda_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument("a grid needs at least 2 points".into()));
    }
    let last = (points - 1) as f64;
    Ok((0..points).map(|i| i as f64 / last).collect())
}

pub const DEFAULT_GRID_POINTS: usize = 11;

pub fn quick_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// Largest excess over the straight line between the endpoints; for
/// accuracies the excess is measured downward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Barriers {
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub mode: RenormMode,
    pub sequential: bool,
    pub points: Vec<CurvePoint>,
    pub barrier: Barriers,
}

impl CurveReport {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn point(&self, lambda: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| (p.lambda - lambda).abs() < 1e-12)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `curve.csv` and `curve_summary.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.write_csv(dir.join("curve.csv"))?;
        std::fs::write(dir.join("curve_summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn barrier(points: &[CurvePoint], metric: impl Fn(&CurvePoint) -> f64, downward: bool) -> f64 {
    let (first, last) = (&points[0], &points[points.len() - 1]);
    let (m0, m1) = (metric(first), metric(last));
    points
        .iter()
        .map(|p| {
            let line = m0 + p.lambda * (m1 - m0);
            if downward {
                line - metric(p)
            } else {
                metric(p) - line
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    let sorted = grid.windows(2).all(|w| w[0] < w[1]);
    if grid.len() < 2 || !sorted || grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
        return Err(Error::InvalidArgument(
            "grid must be strictly increasing from 0 to 1".into(),
        ));
    }
    Ok(())
}

/// Evaluates the interpolation path between two models, re-normalizing each
/// point as configured. Statistics come from `train`.
pub fn eval_curve(
    a: &ModelGraph,
    b: &ModelGraph,
    grid: &[f64],
    train: &Dataset,
    test: &Dataset,
    config: &RenormConfig,
) -> Result<CurveReport> {
    a.ensure_same_architecture(b)?;
    check_grid(grid)?;
    let stats: Option<(ChannelStats, ChannelStats)> = match config.mode {
        RenormMode::Repair | RenormMode::Rescale | RenormMode::RescaleAvg | RenormMode::Reshift => {
            Some((end_stats(a, train, config)?, end_stats(b, train, config)?))
        }
        RenormMode::None | RenormMode::Reset => None,
    };
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mid = interpolate(a, b, lambda)?;
        let goals = stats.as_ref().map(|(sa, sb)| sa.lerp(sb, lambda)).transpose()?;
        let fixed = renormalize(&mid, goals.as_ref(), train, config)?;
        let Metrics { loss: train_loss, accuracy: train_acc } = evaluate(&fixed, train, config.batch_size)?;
        let Metrics { loss: test_loss, accuracy: test_acc } = evaluate(&fixed, test, config.batch_size)?;
        log::info!("λ = {lambda:.2}: train acc {train_acc:.4}, test acc {test_acc:.4}");
        points.push(CurvePoint {
            lambda,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        });
    }
    let barrier = Barriers {
        train_loss: barrier(&points, |p| p.train_loss, false),
        train_acc: barrier(&points, |p| p.train_acc, true),
        test_loss: barrier(&points, |p| p.test_loss, false),
        test_acc: barrier(&points, |p| p.test_acc, true),
    };
    Ok(CurveReport {
        mode: config.mode,
        sequential: config.sequential,
        points,
        barrier,
    })
}
