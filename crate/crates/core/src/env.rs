//! Benchmark environments: truncated LQ systems, a non-linear system,
//! continuous RiverSwim, and finite MDPs embedded in the unit interval.
//!
//! Every environment works in native coordinates and exposes an exact affine
//! map to the unit cubes the agents operate on.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("{what} {value:?} is outside the declared range")]
    OutOfRange { what: &'static str, value: Vec<f64> },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid environment parameters: {0}")]
    Invalid(String),
}

/// Dense row-major matrix, just enough for the linear dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = scale;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Closed interval per coordinate.
pub type Ranges = Vec<(f64, f64)>;

/// Environment-specific dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    /// `s' = clip(A s + B a + w)`.
    Linear { a: Matrix, b: Matrix },
    /// `s' = clip(A f(s) + B g(a) + w)` with `f(s)ᵢ = ½sᵢ + ½sᵢ²` and `g(a) = a²`.
    NonLinear { a: Matrix, b: Matrix },
    /// Left / stay / right with probabilities `(2(1−a)/5, 1/5, 2(1+a)/5)`.
    RiverSwim,
    /// Finite MDP; state `i` sits at `(i+½)/n`, action `j` at `(j+½)/m`.
    Finite {
        kernel: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub dynamics: Dynamics,
    pub state_range: Ranges,
    pub action_range: Ranges,
    /// Range of the raw reward, mapped affinely onto `[0,1]` for the agents.
    pub reward_range: (f64, f64),
    /// Quadratic state and action costs for the LQ-type systems.
    pub state_cost: Option<Matrix>,
    pub action_cost: Option<Matrix>,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub initial_state: Vec<f64>,
}

pub const ENV_NAMES: [&str; 5] = ["lq1", "lq2", "riverswim", "nonlinear", "synthetic-finite"];

const LQ_A: [[f64; 2]; 2] = [[-0.2, -0.07], [0.6, 0.07]];
const LQ1_B: [[f64; 2]; 2] = [[0.07, 0.09], [-0.03, -0.1]];
const LQ2_B: [[f64; 4]; 2] = [[0.1, -0.01, 0.12, 0.08], [0.02, -0.1, 0.3, 0.001]];
const CLIP: f64 = 4.0;
const LQ_NOISE_STD: f64 = 0.05;
const STATE_COST: f64 = 0.4;
const ACTION_COST: f64 = 0.6;
const RIVER_LENGTH: f64 = 6.0;
pub const RIVERSWIM_NOISE_STD: f64 = 1.0;

fn lq_like(name: &str, dynamics: Dynamics, action_dims: usize) -> EnvSpec {
    let state_dims = 2;
    // Worst case of −sᵀPs − aᵀQa over the box.
    let worst = STATE_COST * CLIP * CLIP * state_dims as f64 + ACTION_COST * action_dims as f64;
    EnvSpec {
        name: name.to_string(),
        dynamics,
        state_range: vec![(-CLIP, CLIP); state_dims],
        action_range: vec![(-1.0, 1.0); action_dims],
        reward_range: (-worst, 0.0),
        state_cost: Some(Matrix::scaled_identity(state_dims, STATE_COST)),
        action_cost: Some(Matrix::scaled_identity(action_dims, ACTION_COST)),
        noise_mean: 0.0,
        noise_std: LQ_NOISE_STD,
        initial_state: vec![0.0; state_dims],
    }
}

fn lq_a() -> Matrix {
    Matrix::from_rows(&[&LQ_A[0], &LQ_A[1]])
}

/// The 2-state chain used by oracle tests: action 1 follows `((0.9, 0.1), (0.2, 0.8))`
/// with rewards `(1, 0)`, whose gain 2/3 is optimal; action 0 follows
/// `((0.5, 0.5), (0.1, 0.9))`.
pub fn two_state_chain() -> EnvSpec {
    finite(
        vec![
            vec![vec![0.5, 0.5], vec![0.9, 0.1]],
            vec![vec![0.1, 0.9], vec![0.2, 0.8]],
        ],
        vec![vec![1.0, 1.0], vec![0.0, 0.0]],
    )
    .expect("valid chain")
}

/// Builds a finite environment; rewards must lie in `[0,1]`.
pub fn finite(kernel: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>) -> Result<EnvSpec, EnvError> {
    let n = kernel.len();
    if n == 0 || rewards.len() != n {
        return Err(EnvError::Invalid(
            "kernel and rewards must cover the same states".into(),
        ));
    }
    let m = kernel[0].len();
    for (s, rows) in kernel.iter().enumerate() {
        if rows.len() != m || rewards[s].len() != m || m == 0 {
            return Err(EnvError::Invalid(format!(
                "state {s} has a ragged action list"
            )));
        }
        for row in rows {
            let sum: f64 = row.iter().sum();
            if row.len() != n || row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(EnvError::Invalid(format!(
                    "state {s} has a non-stochastic row"
                )));
            }
        }
        if rewards[s].iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(EnvError::Invalid("finite rewards must lie in [0,1]".into()));
        }
    }
    Ok(EnvSpec {
        name: "synthetic-finite".into(),
        dynamics: Dynamics::Finite { kernel, rewards },
        state_range: vec![(0.0, 1.0)],
        action_range: vec![(0.0, 1.0)],
        reward_range: (0.0, 1.0),
        state_cost: None,
        action_cost: None,
        noise_mean: 0.0,
        noise_std: 0.0,
        initial_state: vec![0.5 / n as f64],
    })
}

pub fn make_env(name: &str) -> Result<EnvSpec, EnvError> {
    match name {
        "lq1" => Ok(lq_like(
            "lq1",
            Dynamics::Linear {
                a: lq_a(),
                b: Matrix::from_rows(&[&LQ1_B[0], &LQ1_B[1]]),
            },
            2,
        )),
        "lq2" => Ok(lq_like(
            "lq2",
            Dynamics::Linear {
                a: lq_a(),
                b: Matrix::from_rows(&[&LQ2_B[0], &LQ2_B[1]]),
            },
            4,
        )),
        "nonlinear" => Ok(lq_like(
            "nonlinear",
            Dynamics::NonLinear {
                a: lq_a(),
                b: Matrix::from_rows(&[&LQ1_B[0], &LQ1_B[1]]),
            },
            2,
        )),
        "riverswim" => Ok(EnvSpec {
            name: "riverswim".into(),
            dynamics: Dynamics::RiverSwim,
            state_range: vec![(0.0, RIVER_LENGTH)],
            action_range: vec![(0.0, 1.0)],
            reward_range: (0.0, 1.0),
            state_cost: None,
            action_cost: None,
            noise_mean: 0.0,
            noise_std: RIVERSWIM_NOISE_STD,
            initial_state: vec![0.0],
        }),
        "synthetic-finite" => Ok(two_state_chain()),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// `(left, stay, right)` probabilities of RiverSwim under action `a`.
pub fn riverswim_branches(a: f64) -> [f64; 3] {
    [2.0 * (1.0 - a) / 5.0, 0.2, 2.0 * (1.0 + a) / 5.0]
}

pub fn riverswim_reward(s: f64, a: f64) -> f64 {
    0.005 * (((s - 6.0) / 6.0).powi(4) + ((a - 1.0) / 2.0).powi(4))
        + 0.5 * ((s / 6.0).powi(4) + ((a + 1.0) / 2.0).powi(4))
}

fn to_unit(x: &[f64], ranges: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(ranges)
        .map(|(&v, &(lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn from_unit(u: &[f64], ranges: &[(f64, f64)]) -> Vec<f64> {
    u.iter()
        .zip(ranges)
        .map(|(&v, &(lo, hi))| (lo + v * (hi - lo)).clamp(lo, hi))
        .collect()
}

fn in_ranges(x: &[f64], ranges: &[(f64, f64)]) -> bool {
    x.len() == ranges.len()
        && x.iter()
            .zip(ranges)
            .all(|(v, (lo, hi))| (*lo..=*hi).contains(v))
}

fn finite_index(x: f64, n: usize) -> usize {
    ((x * n as f64).floor() as usize).min(n - 1)
}

impl EnvSpec {
    pub fn state_dims(&self) -> usize {
        self.state_range.len()
    }

    pub fn action_dims(&self) -> usize {
        self.action_range.len()
    }

    pub fn state_to_unit(&self, s: &[f64]) -> Vec<f64> {
        to_unit(s, &self.state_range)
    }

    pub fn state_from_unit(&self, u: &[f64]) -> Vec<f64> {
        from_unit(u, &self.state_range)
    }

    pub fn action_to_unit(&self, a: &[f64]) -> Vec<f64> {
        to_unit(a, &self.action_range)
    }

    pub fn action_from_unit(&self, u: &[f64]) -> Vec<f64> {
        from_unit(u, &self.action_range)
    }

    pub fn normalize_reward(&self, r: f64) -> f64 {
        let (lo, hi) = self.reward_range;
        ((r - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    fn check(&self, s: &[f64], a: &[f64]) -> Result<(), EnvError> {
        if s.len() != self.state_dims() {
            return Err(EnvError::Dimension {
                what: "state",
                expected: self.state_dims(),
                got: s.len(),
            });
        }
        if a.len() != self.action_dims() {
            return Err(EnvError::Dimension {
                what: "action",
                expected: self.action_dims(),
                got: a.len(),
            });
        }
        if !in_ranges(s, &self.state_range) {
            return Err(EnvError::OutOfRange {
                what: "state",
                value: s.to_vec(),
            });
        }
        if !in_ranges(a, &self.action_range) {
            return Err(EnvError::OutOfRange {
                what: "action",
                value: a.to_vec(),
            });
        }
        Ok(())
    }

    /// Raw reward `r(s, a)` in native coordinates.
    pub fn reward(&self, s: &[f64], a: &[f64]) -> Result<f64, EnvError> {
        self.check(s, a)?;
        Ok(match &self.dynamics {
            Dynamics::Linear { .. } | Dynamics::NonLinear { .. } => {
                let p = self.state_cost.as_ref().expect("LQ systems carry costs");
                let q = self.action_cost.as_ref().expect("LQ systems carry costs");
                -p.quad_form(s) - q.quad_form(a)
            }
            Dynamics::RiverSwim => riverswim_reward(s[0], a[0]),
            Dynamics::Finite { rewards, .. } => {
                let i = finite_index(s[0], rewards.len());
                let j = finite_index(a[0], rewards[0].len());
                rewards[i][j]
            }
        })
    }

    /// Normalized reward at a point of the unit state-action cube.
    pub fn unit_reward(&self, z: &[f64]) -> Result<f64, EnvError> {
        let d_s = self.state_dims();
        let s = self.state_from_unit(&z[..d_s]);
        let a = self.action_from_unit(&z[d_s..]);
        Ok(self.normalize_reward(self.reward(&s, &a)?))
    }

    /// Mean of the next state before noise and clipping (LQ-type systems only).
    pub fn noiseless_drift(&self, s: &[f64], a: &[f64]) -> Option<Vec<f64>> {
        match &self.dynamics {
            Dynamics::Linear { a: ma, b: mb } => {
                let (x, y) = (ma.mul_vec(s), mb.mul_vec(a));
                Some(x.iter().zip(&y).map(|(p, q)| p + q).collect())
            }
            Dynamics::NonLinear { a: ma, b: mb } => {
                let fs: Vec<f64> = s.iter().map(|v| 0.5 * v + 0.5 * v * v).collect();
                let ga: Vec<f64> = a.iter().map(|v| v * v).collect();
                let (x, y) = (ma.mul_vec(&fs), mb.mul_vec(&ga));
                Some(x.iter().zip(&y).map(|(p, q)| p + q).collect())
            }
            _ => None,
        }
    }

    /// One transition in native coordinates: `(next state, raw reward)`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        a: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), EnvError> {
        let reward = self.reward(s, a)?;
        let next = match &self.dynamics {
            Dynamics::Linear { .. } | Dynamics::NonLinear { .. } => {
                let noise = Normal::new(self.noise_mean, self.noise_std)
                    .map_err(|e| EnvError::Invalid(e.to_string()))?;
                let drift = self.noiseless_drift(s, a).expect("linear-type dynamics");
                drift
                    .iter()
                    .zip(&self.state_range)
                    .map(|(m, &(lo, hi))| (m + noise.sample(rng)).clamp(lo, hi))
                    .collect()
            }
            Dynamics::RiverSwim => {
                let [left, stay, _] = riverswim_branches(a[0]);
                let u: f64 = rng.random();
                let w: f64 = StandardNormal.sample(rng);
                let jump = 0.5 * (1.0 + self.noise_std * w / 2.0);
                let (lo, hi) = self.state_range[0];
                let moved = if u < left {
                    s[0] - jump
                } else if u < left + stay {
                    s[0]
                } else {
                    s[0] + jump
                };
                vec![moved.clamp(lo, hi)]
            }
            Dynamics::Finite { kernel, .. } => {
                let n = kernel.len();
                let i = finite_index(s[0], n);
                let j = finite_index(a[0], kernel[0].len());
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = n - 1;
                for (k, p) in kernel[i][j].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = k;
                        break;
                    }
                }
                vec![(next as f64 + 0.5) / n as f64]
            }
        };
        Ok((next, reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn riverswim_branch_examples() {
        let p = riverswim_branches(1.0);
        assert_eq!(p, [0.0, 0.2, 0.8]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn riverswim_reward_at_goal_is_one() {
        assert!((riverswim_reward(6.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lq_zero_is_a_fixed_point_without_noise() {
        let mut env = make_env("lq1").unwrap();
        env.noise_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (next, r) = env.step(&[0.0, 0.0], &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn catalogue_shapes() {
        let lq1 = make_env("lq1").unwrap();
        match &lq1.dynamics {
            Dynamics::Linear { a, b } => {
                assert_eq!((a.rows, a.cols, b.rows, b.cols), (2, 2, 2, 2));
            }
            _ => panic!("lq1 is linear"),
        }
        let lq2 = make_env("lq2").unwrap();
        match &lq2.dynamics {
            Dynamics::Linear { b, .. } => assert_eq!((b.rows, b.cols), (2, 4)),
            _ => panic!("lq2 is linear"),
        }
        let river = make_env("riverswim").unwrap();
        assert_eq!(river.state_range, vec![(0.0, 6.0)]);
        assert_eq!(river.action_range, vec![(0.0, 1.0)]);
        assert!(matches!(make_env("cartpole"), Err(EnvError::UnknownEnv(_))));
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let env = make_env("riverswim").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            env.step(&[3.0], &[1.5], &mut rng),
            Err(EnvError::OutOfRange { what: "action", .. })
        ));
    }

    #[test]
    fn nonlinear_feature_maps() {
        let env = make_env("nonlinear").unwrap();
        let drift = env.noiseless_drift(&[2.0, -1.0], &[0.5, -1.0]).unwrap();
        // f(s) = (3, 0), g(a) = (0.25, 1)
        let expected = [
            -0.2 * 3.0 + 0.07 * 0.25 + 0.09,
            0.6 * 3.0 - 0.03 * 0.25 - 0.1,
        ];
        for (d, e) in drift.iter().zip(expected) {
            assert!((d - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lq_reward_normalization_covers_the_box() {
        let env = make_env("lq1").unwrap();
        let worst = env.reward(&[4.0, -4.0], &[1.0, -1.0]).unwrap();
        assert!((worst - env.reward_range.0).abs() < 1e-12);
        assert_eq!(env.normalize_reward(worst), 0.0);
        assert_eq!(env.normalize_reward(0.0), 1.0);
    }
}
