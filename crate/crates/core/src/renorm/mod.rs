//! Interpolation between models and the re-normalization family that fixes
//! the activation statistics of interpolated models.

mod batch;
mod interp;
mod repair;
mod reset;

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelGraph, Phase};
use crate::stats::{measure_stats, ChannelStats};

pub use batch::{data_independent_correct, recorded_goals, BatchCorrected};
pub use interp::{
    eval_curve, interpolate, interpolate_elementwise, lambda_grid, quick_grid, Barriers, CurvePoint, CurveReport,
    DEFAULT_GRID_POINTS,
};
pub use repair::{goal_stats, repair, with_corrections, DEAD_STD_EPS};
pub use reset::reset_bn;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenormMode {
    #[default]
    None,
    Reset,
    Repair,
    Rescale,
    RescaleAvg,
    Reshift,
}

impl RenormMode {
    pub fn name(self) -> &'static str {
        match self {
            RenormMode::None => "none",
            RenormMode::Reset => "reset",
            RenormMode::Repair => "repair",
            RenormMode::Rescale => "rescale",
            RenormMode::RescaleAvg => "rescale_avg",
            RenormMode::Reshift => "reshift",
        }
    }

    /// Modes that attach per-channel corrections towards goal statistics.
    pub fn uses_goals(self) -> bool {
        matches!(self, RenormMode::Repair | RenormMode::Rescale | RenormMode::RescaleAvg | RenormMode::Reshift)
    }
}

impl std::str::FromStr for RenormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            RenormMode::None,
            RenormMode::Reset,
            RenormMode::Repair,
            RenormMode::Rescale,
            RenormMode::RescaleAvg,
            RenormMode::Reshift,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown renorm mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenormConfig {
    pub mode: RenormMode,
    /// Re-measure each boundary after correcting the ones before it.
    pub sequential: bool,
    pub batch_size: usize,
    /// Use only the first this-many training samples for statistics.
    pub stats_samples: Option<usize>,
}

impl Default for RenormConfig {
    fn default() -> Self {
        RenormConfig {
            mode: RenormMode::None,
            sequential: true,
            batch_size: 128,
            stats_samples: None,
        }
    }
}

impl RenormConfig {
    pub fn new(mode: RenormMode) -> Self {
        RenormConfig {
            mode,
            ..Default::default()
        }
    }

    pub(crate) fn stats_data(&self, data: &Dataset) -> Dataset {
        match self.stats_samples {
            Some(n) if n < data.len() => data.take(n),
            _ => data.clone(),
        }
    }

    pub(crate) fn plan(&self) -> Result<BatchPlan> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(BatchPlan::stats(self.batch_size))
    }
}

/// Pre-activation statistics of an end model, as used for goals.
pub(crate) fn end_stats(model: &ModelGraph, data: &Dataset, config: &RenormConfig) -> Result<ChannelStats> {
    measure_stats(model, &config.stats_data(data), &config.plan()?, Mode::Eval, Phase::PreActivation, None)
}

/// Applies `config.mode` to a model. Goal-based modes need `goals`.
pub fn renormalize(model: &ModelGraph, goals: Option<&ChannelStats>, data: &Dataset, config: &RenormConfig) -> Result<ModelGraph> {
    match config.mode {
        RenormMode::None => Ok(model.clone()),
        RenormMode::Reset => reset_bn(model, &config.stats_data(data), config.batch_size),
        _ => {
            let goals = goals.ok_or_else(|| Error::MissingStats(format!("{} needs goal statistics", config.mode.name())))?;
            repair(model, goals, data, config)
        }
    }
}
