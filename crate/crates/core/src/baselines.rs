//! Fixed uniform-grid competitors: UCRL2-style optimism and RVI Q-learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{stream_rng, AGENT_STREAM, ENV_STREAM};
use crate::env::EnvSpec;
use crate::geometry::{GeometryError, SCell};
use crate::record::{EpisodeRecord, RunFailure, RunTrace, StepRecord};
use crate::solver::{scopt_solve, ExtendedAction, ExtendedModel, SolveOptions};

/// A level-`L` uniform grid over the normalized state and action cubes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub level: u32,
    pub state_dims: usize,
    pub action_dims: usize,
}

impl GridSpec {
    pub fn new(level: u32, env: &EnvSpec) -> Self {
        Self {
            level,
            state_dims: env.state_dims(),
            action_dims: env.action_dims(),
        }
    }

    pub fn state_count(&self) -> usize {
        1 << (self.level as usize * self.state_dims)
    }

    pub fn action_count(&self) -> usize {
        1 << (self.level as usize * self.action_dims)
    }

    /// Same half-open assignment as the partition tree.
    pub fn state_index(&self, unit_state: &[f64]) -> Result<usize, GeometryError> {
        Ok(SCell::containing(unit_state, self.level)?.index() as usize)
    }

    pub fn state_center(&self, index: usize) -> Vec<f64> {
        SCell::from_index(index as u64, self.level, self.state_dims).representative()
    }

    pub fn action_center(&self, index: usize) -> Vec<f64> {
        SCell::from_index(index as u64, self.level, self.action_dims).representative()
    }
}

/// Self-loop weight of the aperiodicity transform in UCRL2's value iteration.
pub const APERIODICITY: f64 = 0.1;
/// Value-iteration budget per UCRL2 planning call; multichain optimistic
/// models never meet the span rule, and the last greedy policy is used then.
pub const EVI_ITERATIONS: u64 = 2_000;

fn default_level() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ucrl2Config {
    #[serde(default = "default_level")]
    pub level: u32,
    pub horizon: u64,
    pub delta: f64,
    /// Scale of the L1 and reward confidence widths. With 0 only unvisited
    /// pairs stay optimistic.
    pub c_conf: f64,
    pub seed: u64,
}

impl Default for Ucrl2Config {
    fn default() -> Self {
        Self {
            level: default_level(),
            horizon: 20_000,
            delta: 0.1,
            c_conf: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RviqConfig {
    #[serde(default = "default_level")]
    pub level: u32,
    pub horizon: u64,
    /// Grid state whose greedy value is subtracted in every update.
    pub reference_state: usize,
    pub seed: u64,
}

impl Default for RviqConfig {
    fn default() -> Self {
        Self {
            level: default_level(),
            horizon: 20_000,
            reference_state: 0,
            seed: 0,
        }
    }
}

/// Lowest-index maximizer.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in q.iter().enumerate() {
        if x > q[best] {
            best = i;
        }
    }
    best
}

fn fail(trace: RunTrace, error: impl ToString) -> RunFailure {
    RunFailure {
        trace,
        error: error.to_string(),
    }
}

/// One environment step from grid indices; returns the record and the next native state.
struct GridStepper<'a> {
    env: &'a EnvSpec,
    grid: GridSpec,
    state: Vec<f64>,
}

impl GridStepper<'_> {
    fn current(&self) -> Result<usize, GeometryError> {
        self.grid.state_index(&self.env.state_to_unit(&self.state))
    }

    fn step<R: Rng>(&mut self, action: usize, rng: &mut R) -> Result<(Vec<f64>, f64, f64), String> {
        let native = self.env.action_from_unit(&self.grid.action_center(action));
        let (next, raw) = self
            .env
            .step(&self.state, &native, rng)
            .map_err(|e| e.to_string())?;
        let reward = self.env.normalize_reward(raw);
        let prev = std::mem::replace(&mut self.state, next);
        Ok((prev, raw, reward))
    }
}

/// UCRL2 on the grid: doubling episodes, L1 confidence rows, extended value iteration.
pub fn ucrl2_run(env: &EnvSpec, grid: GridSpec, cfg: &Ucrl2Config) -> Result<RunTrace, RunFailure> {
    let mut trace = RunTrace::default();
    if grid.level == 0 {
        return Err(fail(trace, "grid level must be at least 1"));
    }
    if !(cfg.c_conf >= 0.0) || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(fail(
            trace,
            "c_conf must be non-negative and delta in (0,1)",
        ));
    }
    let (ns, na) = (grid.state_count(), grid.action_count());
    let mut rng = stream_rng(cfg.seed, ENV_STREAM);
    let mut stepper = GridStepper {
        env,
        grid,
        state: env.initial_state.clone(),
    };
    let log_term = (cfg.horizon as f64 / cfg.delta).ln().max(0.0);
    let mut visits = vec![0u64; ns * na];
    let mut reward_sum = vec![0.0; ns * na];
    let mut counts = vec![0u64; ns * na * ns];
    let mut in_episode = vec![0u64; ns * na];
    let mut policy = vec![0usize; ns];
    let mut episode = 0u64;
    let mut planned = false;

    for t in 0..cfg.horizon {
        let s = stepper.current().map_err(|e| fail(trace.clone(), e))?;
        let a_prev = policy[s];
        let idx = s * na + a_prev;
        if !planned || in_episode[idx] >= visits[idx].max(1) {
            for (v, e) in visits.iter_mut().zip(in_episode.iter_mut()) {
                *v += *e;
                *e = 0;
            }
            let model = ucrl2_model(grid, &visits, &reward_sum, &counts, cfg.c_conf * log_term);
            let eps = 1.0 / (t.max(1) as f64).sqrt();
            let mut opts = SolveOptions::new(eps);
            opts.self_loop = APERIODICITY;
            opts.max_iterations = Some(EVI_ITERATIONS);
            opts.accept_unconverged = true;
            let sol = scopt_solve(&model, &opts).map_err(|e| fail(trace.clone(), e))?;
            episode += 1;
            trace.episodes.push(EpisodeRecord {
                start: t,
                length: 0,
                grid_level: grid.level,
                index: sol.policy.index,
            });
            policy = sol.policy.choice;
            planned = true;
        }
        let a = policy[s];
        let (prev, raw, reward) = stepper
            .step(a, &mut rng)
            .map_err(|e| fail(trace.clone(), e))?;
        let s_next = stepper.current().map_err(|e| fail(trace.clone(), e))?;
        let idx = s * na + a;
        in_episode[idx] += 1;
        reward_sum[idx] += reward;
        counts[idx * ns + s_next] += 1;
        trace.steps.push(StepRecord {
            t: t + 1,
            state: prev,
            action: env.action_from_unit(&grid.action_center(a)),
            raw_reward: raw,
            reward,
            episode,
            active_cells: ns * na,
            max_level: grid.level,
            cell: None,
        });
    }
    Ok(trace)
}

/// Optimistic model from counts; `width` is `c_conf·log(T/δ)`.
fn ucrl2_model(
    grid: GridSpec,
    visits: &[u64],
    reward_sum: &[f64],
    counts: &[u64],
    width: f64,
) -> ExtendedModel {
    let (ns, na) = (grid.state_count(), grid.action_count());
    let actions = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let idx = s * na + a;
                    let n = visits[idx];
                    let denom = n.max(1) as f64;
                    let row = &counts[idx * ns..(idx + 1) * ns];
                    let seen: u64 = row.iter().sum();
                    let center = if seen == 0 {
                        vec![0.0; ns]
                    } else {
                        row.iter().map(|&c| c as f64 / seen as f64).collect()
                    };
                    let radius = if n == 0 { 2.0 } else { (width / denom).sqrt() };
                    let mean = if n == 0 {
                        0.0
                    } else {
                        reward_sum[idx] / n as f64
                    };
                    let bonus = if n == 0 {
                        1.0
                    } else {
                        (width / (2.0 * denom)).sqrt()
                    };
                    ExtendedAction {
                        action: grid.action_center(a),
                        reward: (mean + bonus).min(1.0),
                        center,
                        radius,
                    }
                })
                .collect()
        })
        .collect();
    ExtendedModel {
        states: (0..ns).map(|s| grid.state_center(s)).collect(),
        actions,
        span_bound: None,
        gamma: 0.5,
        floor: 0.0,
    }
}

/// Tabular relative value iteration Q-learning with ε-greedy exploration.
pub fn rviq_run(env: &EnvSpec, grid: GridSpec, cfg: &RviqConfig) -> Result<RunTrace, RunFailure> {
    let trace = RunTrace::default();
    if grid.level == 0 {
        return Err(fail(trace, "grid level must be at least 1"));
    }
    let (ns, na) = (grid.state_count(), grid.action_count());
    if cfg.reference_state >= ns {
        return Err(fail(
            trace,
            format!("reference state {} out of range", cfg.reference_state),
        ));
    }
    Rviq::new(ns, na, cfg.reference_state).run(env, grid, cfg)
}

/// Q-table state of the RVI learner.
#[derive(Debug, Clone)]
pub struct Rviq {
    pub q: Vec<Vec<f64>>,
    pair_visits: Vec<Vec<u64>>,
    state_visits: Vec<u64>,
    reference: usize,
}

impl Rviq {
    pub fn new(states: usize, actions: usize, reference: usize) -> Self {
        Self {
            q: vec![vec![0.0; actions]; states],
            pair_visits: vec![vec![0; actions]; states],
            state_visits: vec![0; states],
            reference,
        }
    }

    /// ε-greedy choice with `ε = 1/√n(s)`.
    pub fn choose<R: Rng>(&mut self, s: usize, rng: &mut R) -> usize {
        self.state_visits[s] += 1;
        let eps = 1.0 / (self.state_visits[s] as f64).sqrt();
        if rng.random::<f64>() < eps {
            rng.random_range(0..self.q[s].len())
        } else {
            greedy(&self.q[s])
        }
    }

    /// `Q(s,a) += β(r + max Q(s′,·) − max Q(s_ref,·) − Q(s,a))`, `β = 1/⌈0.8·n(s,a)⌉`.
    pub fn update(&mut self, s: usize, a: usize, reward: f64, s_next: usize) {
        self.pair_visits[s][a] += 1;
        let beta = 1.0 / (0.8 * self.pair_visits[s][a] as f64).ceil();
        let best_next = self.q[s_next][greedy(&self.q[s_next])];
        let best_ref = self.q[self.reference][greedy(&self.q[self.reference])];
        let target = reward + best_next - best_ref;
        self.q[s][a] += beta * (target - self.q[s][a]);
    }

    fn run(
        mut self,
        env: &EnvSpec,
        grid: GridSpec,
        cfg: &RviqConfig,
    ) -> Result<RunTrace, RunFailure> {
        let mut trace = RunTrace::default();
        let mut env_rng = stream_rng(cfg.seed, ENV_STREAM);
        let mut agent_rng = stream_rng(cfg.seed, AGENT_STREAM);
        let mut stepper = GridStepper {
            env,
            grid,
            state: env.initial_state.clone(),
        };
        trace.episodes.push(EpisodeRecord {
            start: 0,
            length: cfg.horizon,
            grid_level: grid.level,
            index: f64::NAN,
        });
        for t in 0..cfg.horizon {
            let s = stepper.current().map_err(|e| fail(trace.clone(), e))?;
            let a = self.choose(s, &mut agent_rng);
            let (prev, raw, reward) = stepper
                .step(a, &mut env_rng)
                .map_err(|e| fail(trace.clone(), e))?;
            let s_next = stepper.current().map_err(|e| fail(trace.clone(), e))?;
            self.update(s, a, reward, s_next);
            trace.steps.push(StepRecord {
                t: t + 1,
                state: prev,
                action: env.action_from_unit(&grid.action_center(a)),
                raw_reward: raw,
                reward,
                episode: 1,
                active_cells: grid.state_count() * grid.action_count(),
                max_level: grid.level,
                cell: None,
            });
        }
        Ok(trace)
    }
}
