//! Span-constrained extended value iteration over floored L1 confidence sets.
//!
//! Every (state, action) pair carries an estimated row `center`, an L1 budget
//! `radius` and the model-wide per-destination `floor`. The admissible kernels
//! for the pair are
//!
//! ```text
//! { θ : Σθ = 1, θ ≥ floor, ‖θ − center‖₁ ≤ radius }
//! ```
//!
//! [`scopt_solve`] iterates the truncated operator `Γ_c` and returns a
//! deterministic policy together with its optimistic gain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance under which a truncated state still counts as greedy-consistent.
pub const FEASIBILITY_TOL: f64 = 1e-10;
/// Minimum iteration cap regardless of the geometric estimate.
pub const MIN_ITERATION_CAP: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("floor {floor} is infeasible for {states} states (floor·|S| > 1)")]
    InfeasibleFloor { floor: f64, states: usize },
    #[error("state {0} has no permitted action")]
    EmptyActions(usize),
    #[error("state {state}, action {action}: row has {got} entries, expected {expected}")]
    RowShape {
        state: usize,
        action: usize,
        got: usize,
        expected: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(
        "no convergence after {iterations} iterations (span of last difference {span_diff:e}, cap {cap})"
    )]
    NoConvergence {
        iterations: u64,
        span_diff: f64,
        cap: u64,
    },
}

/// One permitted action of a discrete state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedAction {
    /// Action coordinates, informational only.
    #[serde(default)]
    pub action: Vec<f64>,
    /// Bonus-augmented reward `r̃(s,a)`.
    pub reward: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// A finite extended MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedModel {
    /// State coordinates, informational only; may be empty.
    #[serde(default)]
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<ExtendedAction>>,
    /// `c`; `None` disables truncation.
    pub span_bound: Option<f64>,
    /// Contraction factor `γ ∈ (0,1)`.
    pub gamma: f64,
    pub floor: f64,
}

impl ExtendedModel {
    pub fn state_count(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.state_count();
        if n == 0 {
            return Err(SolverError::Invalid("model has no states".into()));
        }
        if !self.states.is_empty() && self.states.len() != n {
            return Err(SolverError::Invalid(format!(
                "{} state labels for {n} action lists",
                self.states.len()
            )));
        }
        check_floor(self.floor, n)?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SolverError::Invalid(format!(
                "gamma {} not in (0,1)",
                self.gamma
            )));
        }
        if let Some(c) = self.span_bound {
            if c.is_nan() || c <= 0.0 {
                return Err(SolverError::Invalid(format!(
                    "span bound {c} must be positive"
                )));
            }
        }
        for (s, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(SolverError::EmptyActions(s));
            }
            for (a, act) in acts.iter().enumerate() {
                if act.center.len() != n {
                    return Err(SolverError::RowShape {
                        state: s,
                        action: a,
                        got: act.center.len(),
                        expected: n,
                    });
                }
                if !act.reward.is_finite() {
                    return Err(SolverError::Invalid(format!(
                        "reward at ({s},{a}) is not finite"
                    )));
                }
                if !(act.radius >= 0.0) || act.center.iter().any(|&p| !(p >= 0.0)) {
                    return Err(SolverError::Invalid(format!(
                        "row ({s},{a}) has a negative radius or entry"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_floor(floor: f64, states: usize) -> Result<(), SolverError> {
    if !(floor >= 0.0) || floor * states as f64 > 1.0 + 1e-12 {
        Err(SolverError::InfeasibleFloor { floor, states })
    } else {
        Ok(())
    }
}

pub fn span(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// State indices sorted by decreasing value, ties by lower index.
fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    order
}

/// Greedy maximizer of `θ·v` over the floored L1 ball; writes θ and returns the value.
///
/// The center is first lifted to the floor, the total is restored to one
/// (adding to the best state or removing from the worst ones), and what is
/// left of the L1 budget moves mass from the lowest-valued states to the best
/// one. If the budget is smaller than the distance to the floored simplex,
/// the nearest feasible point is used.
fn inner_max_ordered(
    v: &[f64],
    order: &[usize],
    center: &[f64],
    radius: f64,
    floor: f64,
    theta: &mut [f64],
) -> f64 {
    let mut cost = 0.0;
    let mut total = 0.0;
    for (t, &c) in theta.iter_mut().zip(center) {
        *t = c.max(floor);
        cost += *t - c;
        total += *t;
    }
    let top = order[0];
    let excess = total - 1.0;
    if excess < 0.0 {
        theta[top] -= excess;
        cost -= excess;
    } else if excess > 0.0 {
        let mut left = excess;
        for &j in order.iter().rev() {
            let take = (theta[j] - floor).max(0.0).min(left);
            theta[j] -= take;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        cost += excess;
    }

    let budget = ((radius - cost) / 2.0).max(0.0);
    let mut moved = 0.0;
    if budget > 0.0 {
        for &j in order[1..].iter().rev() {
            let take = (theta[j] - floor).max(0.0).min(budget - moved);
            theta[j] -= take;
            moved += take;
            if moved >= budget {
                break;
            }
        }
    }
    theta[top] += moved;
    theta.iter().zip(v).map(|(t, x)| t * x).sum()
}

/// `max θ·v` over `{Σθ = 1, θ ≥ floor, ‖θ − center‖₁ ≤ radius}` and its maximizer.
pub fn inner_max(
    v: &[f64],
    center: &[f64],
    radius: f64,
    floor: f64,
) -> Result<(f64, Vec<f64>), SolverError> {
    if v.is_empty() || v.len() != center.len() {
        return Err(SolverError::Invalid(format!(
            "value has {} entries, center {}",
            v.len(),
            center.len()
        )));
    }
    check_floor(floor, v.len())?;
    let order = descending_order(v);
    let mut theta = vec![0.0; v.len()];
    let value = inner_max_ordered(v, &order, center, radius, floor, &mut theta);
    Ok((value, theta))
}

/// `min θ·v` over the same set.
pub fn inner_min(
    v: &[f64],
    center: &[f64],
    radius: f64,
    floor: f64,
) -> Result<(f64, Vec<f64>), SolverError> {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let (value, theta) = inner_max(&neg, center, radius, floor)?;
    Ok((-value, theta))
}

/// Result of applying `𝒯` once.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanOutput {
    pub values: Vec<f64>,
    /// Greedy action index per state, lowest index on ties.
    pub actions: Vec<usize>,
    /// Maximizing kernel row of the greedy action per state.
    pub thetas: Vec<Vec<f64>>,
}

/// One application of `𝒯`; `self_loop` mixes every row with the current state.
fn sweep(
    model: &ExtendedModel,
    v: &[f64],
    scratch: &mut [f64],
    self_loop: f64,
) -> (Vec<f64>, Vec<usize>) {
    let order = descending_order(v);
    let mut values = Vec::with_capacity(v.len());
    let mut actions = Vec::with_capacity(v.len());
    for (s, acts) in model.actions.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        for (a, act) in acts.iter().enumerate() {
            let inner = inner_max_ordered(v, &order, &act.center, act.radius, model.floor, scratch);
            let q = act.reward + (1.0 - self_loop) * inner + self_loop * v[s];
            if q > best {
                best = q;
                best_a = a;
            }
        }
        values.push(best);
        actions.push(best_a);
    }
    (values, actions)
}

/// `𝒯v(s) = max_{a, θ} r̃(s,a) + θ·v`.
pub fn bellman_t(v: &[f64], model: &ExtendedModel) -> Result<BellmanOutput, SolverError> {
    model.validate()?;
    if v.len() != model.state_count() || v.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::Invalid(
            "value vector has wrong length or is not finite".into(),
        ));
    }
    let mut scratch = vec![0.0; v.len()];
    let (values, actions) = sweep(model, v, &mut scratch, 0.0);
    let order = descending_order(v);
    let thetas = model
        .actions
        .iter()
        .zip(&actions)
        .map(|(acts, &a)| {
            let act = &acts[a];
            let mut theta = vec![0.0; v.len()];
            inner_max_ordered(v, &order, &act.center, act.radius, model.floor, &mut theta);
            theta
        })
        .collect();
    Ok(BellmanOutput {
        values,
        actions,
        thetas,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub values: Vec<f64>,
    pub truncated: Vec<bool>,
}

/// `Γ_c`: clips `values` at `min(values) + c`.
pub fn truncate(values: &[f64], span_bound: Option<f64>) -> Truncation {
    let Some(c) = span_bound else {
        return Truncation {
            values: values.to_vec(),
            truncated: vec![false; values.len()],
        };
    };
    let cap = min_of(values) + c;
    let truncated = values.iter().map(|&x| x > cap).collect();
    Truncation {
        values: values.iter().map(|&x| x.min(cap)).collect(),
        truncated,
    }
}

/// Stopping criterion of the value iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stopping {
    /// `span(v_{n+1} − v_n) + 2γⁿ/(1−γ)·span(v_1) ≤ ε`.
    Certified,
    /// `span(v_{n+1} − v_n) ≤ ε`.
    #[default]
    Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub epsilon: f64,
    pub reference_state: usize,
    pub stopping: Stopping,
    /// Overrides the geometric iteration cap.
    pub max_iterations: Option<u64>,
    /// Weight `w ∈ [0,1)` of the aperiodicity transform `θ ↦ (1−w)θ + w·e_s`;
    /// leaves gains unchanged.
    pub self_loop: f64,
    /// Return the greedy policy of the last iterate instead of an error when
    /// the iteration cap is hit.
    pub accept_unconverged: bool,
}

impl SolveOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            reference_state: 0,
            stopping: Stopping::default(),
            max_iterations: None,
            self_loop: 0.0,
            accept_unconverged: false,
        }
    }

    pub fn certified(mut self) -> Self {
        self.stopping = Stopping::Certified;
        self
    }
}

/// A deterministic policy on the discrete states and its optimistic gain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicy {
    pub choice: Vec<usize>,
    pub index: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub policy: DiscretePolicy,
    /// Final iterate shifted so that the reference state has value zero.
    pub bias: Vec<f64>,
    pub iterations: u64,
    /// States where truncation broke greedy consistency and the arg-min branch was used.
    pub fallback_states: Vec<usize>,
    /// Bracket `[min, max]` of `Γ_c v_n − v_n` around the index.
    pub gain_bounds: (f64, f64),
    /// False only for an accepted unconverged run.
    pub converged: bool,
}

/// Iteration cap `10·⌈log(2·span(v₁)/(ε(1−γ)))/log(1/γ)⌉`, at least [`MIN_ITERATION_CAP`].
pub fn iteration_cap(span_v1: f64, epsilon: f64, gamma: f64) -> u64 {
    let ratio = 2.0 * span_v1 / (epsilon * (1.0 - gamma));
    let steps = if ratio > 1.0 {
        (ratio.ln() / (1.0 / gamma).ln()).ceil()
    } else {
        0.0
    };
    let cap = 10.0 * steps;
    if cap.is_finite() && cap < u64::MAX as f64 {
        (cap as u64).max(MIN_ITERATION_CAP)
    } else {
        u64::MAX
    }
}

/// ScOpt: iterates `v_{n+1} = Γ_c v_n − min(Γ_c v_n)` from `v₀ = 0` until the
/// stopping rule holds, then returns `G_c v_n`.
pub fn scopt_solve(model: &ExtendedModel, opts: &SolveOptions) -> Result<Solution, SolverError> {
    model.validate()?;
    let n_states = model.state_count();
    if !(opts.epsilon > 0.0) {
        return Err(SolverError::Invalid(format!(
            "epsilon {} must be positive",
            opts.epsilon
        )));
    }
    if !(0.0..1.0).contains(&opts.self_loop) {
        return Err(SolverError::Invalid(format!(
            "self_loop {} not in [0,1)",
            opts.self_loop
        )));
    }
    if opts.reference_state >= n_states {
        return Err(SolverError::Invalid(format!(
            "reference state {} out of range",
            opts.reference_state
        )));
    }
    let gamma = model.gamma;
    let mut scratch = vec![0.0; n_states];
    let mut v = vec![0.0; n_states];
    let mut span_v1 = 0.0;
    let mut cap = opts.max_iterations.unwrap_or(u64::MAX);
    let mut n: u64 = 0;
    loop {
        let (tv, greedy) = sweep(model, &v, &mut scratch, opts.self_loop);
        let gv = truncate(&tv, model.span_bound).values;
        let shift = min_of(&gv);
        let next: Vec<f64> = gv.iter().map(|x| x - shift).collect();
        if n == 0 {
            span_v1 = span(&next);
            if opts.max_iterations.is_none() {
                cap = iteration_cap(span_v1, opts.epsilon, gamma);
            }
        }
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        let span_diff = span(&diff);
        let stop = match opts.stopping {
            Stopping::Span => span_diff <= opts.epsilon,
            Stopping::Certified => {
                let tail = 2.0 * (n as f64 * gamma.ln()).exp() / (1.0 - gamma) * span_v1;
                span_diff + tail <= opts.epsilon
            }
        };
        if stop || (opts.accept_unconverged && n + 1 >= cap) {
            let mut sol = finish(model, &v, &tv, &gv, &greedy, n + 1, opts);
            sol.converged = stop;
            return Ok(sol);
        }
        n += 1;
        if n >= cap {
            return Err(SolverError::NoConvergence {
                iterations: n,
                span_diff,
                cap,
            });
        }
        v = next;
    }
}

fn finish(
    model: &ExtendedModel,
    v: &[f64],
    tv: &[f64],
    gv: &[f64],
    greedy: &[usize],
    iterations: u64,
    opts: &SolveOptions,
) -> Solution {
    let w = opts.self_loop;
    let mut choice = greedy.to_vec();
    let mut fallback_states = Vec::new();
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let neg_order = descending_order(&neg);
    let mut theta = vec![0.0; v.len()];
    for s in 0..v.len() {
        if (tv[s] - gv[s]).abs() <= FEASIBILITY_TOL {
            continue;
        }
        // Arg-min over actions and kernels.
        let mut best = f64::INFINITY;
        let mut best_a = 0;
        for (a, act) in model.actions[s].iter().enumerate() {
            let inner = inner_max_ordered(
                &neg,
                &neg_order,
                &act.center,
                act.radius,
                model.floor,
                &mut theta,
            );
            let q = act.reward - (1.0 - w) * inner + w * v[s];
            if q < best {
                best = q;
                best_a = a;
            }
        }
        choice[s] = best_a;
        fallback_states.push(s);
    }
    let gains: Vec<f64> = gv.iter().zip(v).map(|(a, b)| a - b).collect();
    let lo = min_of(&gains);
    let hi = lo + span(&gains);
    let bias = v.iter().map(|x| x - v[opts.reference_state]).collect();
    Solution {
        policy: DiscretePolicy {
            choice,
            index: 0.5 * (lo + hi),
        },
        bias,
        iterations,
        fallback_states,
        gain_bounds: (lo, hi),
        converged: true,
    }
}
