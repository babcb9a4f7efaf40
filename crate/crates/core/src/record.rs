//! Per-step logs shared by ZoRL and the fixed-grid baselines.

use crate::geometry::{CellId, SplitEvent};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step counter.
    pub t: u64,
    /// State before the step, native coordinates.
    pub state: Vec<f64>,
    /// Played action, native coordinates.
    pub action: Vec<f64>,
    pub raw_reward: f64,
    /// Reward in `[0,1]` as seen by the learner.
    pub reward: f64,
    /// 1-based episode counter.
    pub episode: u64,
    pub active_cells: usize,
    pub max_level: u32,
    /// Partition cell whose action was played; `None` for grid baselines.
    pub cell: Option<CellId>,
}

/// Everything a run produced up to its end or its failure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
    pub splits: Vec<SplitEvent>,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 0-based step at which the episode starts.
    pub start: u64,
    /// Planned length `H_k`; 0 when the episode ends on a data-driven rule.
    pub length: u64,
    /// Level of the frozen state grid.
    pub grid_level: u32,
    /// Optimistic gain returned by the planner.
    pub index: f64,
}

impl RunTrace {
    pub fn cumulative_raw_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.raw_reward).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len() as f64
    }
}

/// A run that stopped early; `trace` holds the steps completed before `error`.
#[derive(Debug, Clone, thiserror::Error)]
#[error("run aborted after {} steps: {error}", trace.steps.len())]
pub struct RunFailure {
    pub trace: RunTrace,
    pub error: String,
}
