//! The ZoRL learner: episodic optimistic planning on an adaptively refined
//! partition of the normalized state-action cube.

use std::collections::btree_map::{BTreeMap, Entry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvSpec};
use crate::estimator::{kernel_row, record_transition, RadiusRule};
use crate::geometry::{
    discrete_spaces, CellId, Dims, DiscreteSpaces, GeometryError, PartitionTree, SplitRule,
};
use crate::record::{EpisodeRecord, RunFailure, RunTrace, StepRecord};
use crate::solver::{
    scopt_solve, ExtendedAction, ExtendedModel, SolveOptions, SolverError, Stopping,
};

/// Stream ids carved out of a run's seed.
pub const ENV_STREAM: u64 = 0;
pub const AGENT_STREAM: u64 = 1;

/// Seeded generator for one consumer of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plug-in hyperparameters `C_a`, `C_η`, `c`, `C_H`.
    #[default]
    Practical,
    /// Thresholds, radii and span bound computed from the structural constants.
    Theoretical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub horizon: u64,
    pub delta: f64,
    pub mode: Mode,
    pub l_r: f64,
    pub l_p: f64,
    pub alpha: f64,
    pub c_v: f64,
    pub c1: f64,
    pub kappa1: f64,
    pub c_a: f64,
    pub c_eta: f64,
    /// Span bound `c` used in practical mode.
    pub span_bound: f64,
    pub c_h: f64,
    pub max_depth: u32,
    pub stopping: Stopping,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            horizon: 20_000,
            delta: 0.1,
            mode: Mode::Practical,
            l_r: 0.01,
            l_p: 1.0,
            alpha: 0.5,
            c_v: 1.0,
            c1: 0.01,
            kappa1: 1.0,
            c_a: 10.0,
            c_eta: 10.0,
            span_bound: 4.0,
            c_h: 0.1,
            max_depth: 20,
            stopping: Stopping::Span,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.mode == Mode::Theoretical && self.horizon < 2 {
            return bad("theoretical mode needs horizon ≥ 2");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0,1)");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0,1)");
        }
        let positive = [
            ("l_r", self.l_r),
            ("l_p", self.l_p),
            ("c_v", self.c_v),
            ("c1", self.c1),
            ("kappa1", self.kappa1),
            ("c_a", self.c_a),
            ("c_eta", self.c_eta),
            ("span_bound", self.span_bound),
            ("c_h", self.c_h),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(AgentError::Config(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn split_rule(&self) -> SplitRule {
        match self.mode {
            Mode::Practical => SplitRule::Practical { c_a: self.c_a },
            Mode::Theoretical => SplitRule::Theoretical {
                c1: self.c1,
                horizon: self.horizon,
                delta: self.delta,
            },
        }
    }

    pub fn radius_rule(&self) -> RadiusRule {
        match self.mode {
            Mode::Practical => RadiusRule::Practical { c_eta: self.c_eta },
            Mode::Theoretical => RadiusRule::Theoretical {
                alpha: self.alpha,
                c1: self.c1,
                horizon: self.horizon,
                delta: self.delta,
                l_p: self.l_p,
                c_v: self.c_v,
            },
        }
    }

    /// `c`: the plug-in value, or `(1+L_r)/((1−α)(1−1/T))`.
    pub fn span_bound_value(&self) -> f64 {
        match self.mode {
            Mode::Practical => self.span_bound,
            Mode::Theoretical => {
                (1.0 + self.l_r) / ((1.0 - self.alpha) * (1.0 - 1.0 / self.horizon as f64))
            }
        }
    }

    /// Per-destination floor `(1−α)/(|S_t|·T)`.
    pub fn floor(&self, states: usize) -> f64 {
        (1.0 - self.alpha) / (states as f64 * self.horizon as f64)
    }

    /// `γ = 1 − (1−α)/(|S_t|·T)`.
    pub fn gamma(&self, states: usize) -> f64 {
        1.0 - self.floor(states)
    }

    /// `H_k` from the mean diameter of the cells the policy plays.
    pub fn episode_duration(&self, mean_diam: f64, state_dims: usize) -> u64 {
        let exponent = 2.0 * (state_dims as f64 + 1.0);
        let raw = match self.mode {
            Mode::Practical => self.c_h * mean_diam.powf(-exponent),
            Mode::Theoretical => {
                self.c_h * (self.horizon as f64 / self.delta).ln()
                    / (self.kappa1 * mean_diam).powf(exponent)
            }
        };
        if raw.is_finite() {
            (raw.ceil() as u64).max(1)
        } else {
            u64::MAX
        }
    }
}

/// The finite model handed to the solver, with the cell behind every action.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub spaces: DiscreteSpaces,
    pub model: ExtendedModel,
}

/// `M⁺_t`: discrete spaces, kernel rows, bonus rewards, floor, `γ` and `c`.
pub fn build_extended_model(
    tree: &PartitionTree,
    env: &EnvSpec,
    cfg: &AgentConfig,
) -> Result<BuiltModel, AgentError> {
    let spaces = discrete_spaces(tree)?;
    let n = spaces.state_count();
    let floor = cfg.floor(n);
    let rule = cfg.radius_rule();
    let mut cache: BTreeMap<CellId, ExtendedAction> = BTreeMap::new();
    let mut actions = Vec::with_capacity(n);
    for acts in &spaces.actions {
        let mut row = Vec::with_capacity(acts.len());
        for da in acts {
            let act = match cache.entry(da.cell) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let cell = tree.cell(da.cell);
                    let kr = kernel_row(tree, da.cell, spaces.level, &rule, floor);
                    let reward =
                        env.unit_reward(&cell.representative())? + cfg.l_r * cell.diameter();
                    e.insert(ExtendedAction {
                        action: da.action.clone(),
                        reward,
                        center: kr.center,
                        radius: kr.radius,
                    })
                }
            };
            row.push(act.clone());
        }
        actions.push(row);
    }
    let model = ExtendedModel {
        states: spaces.representatives(),
        actions,
        span_bound: Some(cfg.span_bound_value()),
        gamma: cfg.gamma(n),
        floor,
    };
    Ok(BuiltModel { spaces, model })
}

/// A discrete policy extended to the continuum: constant on each level-ℓ S-cell.
#[derive(Debug, Clone)]
pub struct ContinuousPolicy {
    pub level: u32,
    /// Per grid state: owning cell and its action representative.
    pub choices: Vec<(CellId, Vec<f64>)>,
    pub index: f64,
}

impl ContinuousPolicy {
    pub fn from_solution(spaces: &DiscreteSpaces, choice: &[usize], index: f64) -> Self {
        let choices = spaces
            .actions
            .iter()
            .zip(choice)
            .map(|(acts, &a)| (acts[a].cell, acts[a].action.clone()))
            .collect();
        Self {
            level: spaces.level,
            choices,
            index,
        }
    }

    /// Grid index and `(cell, unit action)` for a normalized state.
    pub fn act(&self, unit_state: &[f64]) -> Result<(usize, &(CellId, Vec<f64>)), GeometryError> {
        let idx = crate::geometry::SCell::containing(unit_state, self.level)?.index() as usize;
        Ok((idx, &self.choices[idx]))
    }

    /// Mean diameter of the cells the policy plays, one term per grid state.
    pub fn mean_diameter(&self, tree: &PartitionTree) -> f64 {
        let total: f64 = self
            .choices
            .iter()
            .map(|(c, _)| tree.cell(*c).diameter())
            .sum();
        total / self.choices.len() as f64
    }
}

/// A ZoRL learner bound to one environment.
#[derive(Debug, Clone)]
pub struct Zorl {
    pub cfg: AgentConfig,
    pub tree: PartitionTree,
    pub env: EnvSpec,
}

impl Zorl {
    pub fn new(env: EnvSpec, cfg: AgentConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let dims = Dims::new(env.state_dims(), env.action_dims());
        let tree = PartitionTree::new(dims, cfg.split_rule(), cfg.max_depth);
        Ok(Self { cfg, tree, env })
    }

    /// Solves `M⁺_t` for the current tree.
    pub fn plan(&self) -> Result<ContinuousPolicy, AgentError> {
        let built = build_extended_model(&self.tree, &self.env, &self.cfg)?;
        let mut opts = SolveOptions::new(1.0 / self.cfg.horizon as f64);
        opts.stopping = self.cfg.stopping;
        let sol = scopt_solve(&built.model, &opts)?;
        Ok(ContinuousPolicy::from_solution(
            &built.spaces,
            &sol.policy.choice,
            sol.policy.index,
        ))
    }

    /// Plays `T` steps. On failure the steps taken so far are returned with the error.
    pub fn run(&mut self) -> Result<RunTrace, RunFailure> {
        let mut trace = RunTrace::default();
        match self.run_into(&mut trace) {
            Ok(()) => {
                trace.splits = self.tree.splits().to_vec();
                Ok(trace)
            }
            Err(e) => {
                trace.splits = self.tree.splits().to_vec();
                Err(RunFailure {
                    trace,
                    error: e.to_string(),
                })
            }
        }
    }

    fn run_into(&mut self, trace: &mut RunTrace) -> Result<(), AgentError> {
        let mut rng = stream_rng(self.cfg.seed, ENV_STREAM);
        let d_s = self.env.state_dims();
        let mut state = self.env.initial_state.clone();
        let mut policy: Option<ContinuousPolicy> = None;
        let (mut h, mut h_k, mut episode) = (0u64, 0u64, 0u64);
        for t in 0..self.cfg.horizon {
            if h >= h_k || policy.is_none() {
                let p = self.plan()?;
                h_k = self.cfg.episode_duration(p.mean_diameter(&self.tree), d_s);
                episode += 1;
                h = 0;
                trace.episodes.push(EpisodeRecord {
                    start: t,
                    length: h_k,
                    grid_level: p.level,
                    index: p.index,
                });
                policy = Some(p);
            }
            h += 1;
            let pol = policy.as_ref().expect("planned above");
            let unit_state = self.env.state_to_unit(&state);
            let (_, (cell, unit_action)) = pol.act(&unit_state)?;
            let cell = *cell;
            let action = self.env.action_from_unit(unit_action);
            let (next, raw) = self.env.step(&state, &action, &mut rng)?;
            let z: Vec<f64> = unit_state
                .iter()
                .chain(unit_action.iter())
                .copied()
                .collect();
            record_transition(&mut self.tree, &z, &self.env.state_to_unit(&next))?;
            trace.steps.push(StepRecord {
                t: t + 1,
                state: std::mem::replace(&mut state, next),
                action,
                raw_reward: raw,
                reward: self.env.normalize_reward(raw),
                episode,
                active_cells: self.tree.active_count(),
                max_level: self.tree.max_level(),
                cell: Some(cell),
            });
        }
        Ok(())
    }
}

/// Convenience wrapper: builds a learner for `env` and runs it.
pub fn run(env: &EnvSpec, cfg: &AgentConfig) -> Result<RunTrace, RunFailure> {
    let mut agent = Zorl::new(env.clone(), cfg.clone()).map_err(|e| RunFailure {
        trace: RunTrace::default(),
        error: e.to_string(),
    })?;
    agent.run()
}
