//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use zorl::solver::{ExtendedAction, ExtendedModel};

/// Containment from the cube bounds; the global upper face is closed.
pub fn cube_contains(level: u32, anchor: &[u32], point: &[f64]) -> bool {
    let side = 0.5f64.powi(level as i32);
    anchor.iter().zip(point).all(|(&a, &x)| {
        let lo = a as f64 * side;
        let hi = lo + side;
        (lo <= x && x < hi) || (x == 1.0 && hi == 1.0)
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let pivot_row = a[col].clone();
                for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

fn combinations(
    n: usize,
    k: usize,
    start: usize,
    cur: &mut Vec<usize>,
    out: &mut dyn FnMut(&[usize]),
) {
    if cur.len() == k {
        out(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// `max θ·v` over `{Σθ = 1, θ ≥ floor, ‖θ − center‖₁ ≤ radius}` by enumerating
/// the vertices of the polytope written with the `2ⁿ` sign facets of the L1
/// ball. `None` when the set is empty.
pub fn lp_inner_max(v: &[f64], center: &[f64], radius: f64, floor: f64) -> Option<f64> {
    let n = v.len();
    // Inequalities g·θ ≤ h.
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let mut g = vec![0.0; n];
        g[j] = -1.0;
        ineq.push((g, -floor));
    }
    for mask in 0..(1u32 << n) {
        let g: Vec<f64> = (0..n)
            .map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let h = radius + g.iter().zip(center).map(|(s, c)| s * c).sum::<f64>();
        ineq.push((g, h));
    }
    let mut best: Option<f64> = None;
    combinations(ineq.len(), n - 1, 0, &mut Vec::new(), &mut |pick| {
        let mut a = vec![vec![1.0; n]];
        let mut b = vec![1.0];
        for &i in pick {
            a.push(ineq[i].0.clone());
            b.push(ineq[i].1);
        }
        let Some(theta) = solve_linear(a, b) else {
            return;
        };
        let feasible = ineq
            .iter()
            .all(|(g, h)| g.iter().zip(&theta).map(|(x, y)| x * y).sum::<f64>() <= h + 1e-9);
        if feasible {
            let value: f64 = theta.iter().zip(v).map(|(t, x)| t * x).sum();
            best = Some(best.map_or(value, |b: f64| b.max(value)));
        }
    });
    best
}

/// Stationary distribution of an irreducible stochastic matrix.
pub fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    solve_linear(a, b).expect("irreducible chain")
}

/// A finite MDP with strictly positive kernels.
#[derive(Debug, Clone)]
pub struct Mdp {
    /// `kernel[s][a]` is a row over next states.
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl Mdp {
    pub fn random(rng: &mut ChaCha8Rng, states: usize, actions: usize, min_entry: f64) -> Self {
        let row = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..states).map(|_| rng.random::<f64>().powi(3)).collect();
            let total: f64 = w.iter().sum();
            let free = 1.0 - min_entry * states as f64;
            w.iter()
                .map(|x| min_entry + free * x / total)
                .collect::<Vec<_>>()
        };
        let kernel = (0..states)
            .map(|_| (0..actions).map(|_| row(rng)).collect())
            .collect();
        let reward = (0..states)
            .map(|_| (0..actions).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self { kernel, reward }
    }

    /// Optimal gain by enumerating every deterministic stationary policy.
    pub fn optimal_gain(&self) -> f64 {
        let states = self.kernel.len();
        let actions = self.kernel[0].len();
        let mut best = f64::NEG_INFINITY;
        for code in 0..actions.pow(states as u32) {
            let mut c = code;
            let policy: Vec<usize> = (0..states)
                .map(|_| {
                    let a = c % actions;
                    c /= actions;
                    a
                })
                .collect();
            let p: Vec<Vec<f64>> = policy
                .iter()
                .enumerate()
                .map(|(s, &a)| self.kernel[s][a].clone())
                .collect();
            let mu = stationary(&p);
            let gain: f64 = policy
                .iter()
                .enumerate()
                .map(|(s, &a)| mu[s] * self.reward[s][a])
                .sum();
            best = best.max(gain);
        }
        best
    }

    /// Extended model with the given per-row centers and radii.
    pub fn extended(
        &self,
        centers: &[Vec<Vec<f64>>],
        radius: f64,
        floor: f64,
        span_bound: Option<f64>,
    ) -> ExtendedModel {
        let actions = self
            .reward
            .iter()
            .zip(centers)
            .map(|(rs, cs)| {
                rs.iter()
                    .zip(cs)
                    .map(|(&r, c)| ExtendedAction {
                        action: Vec::new(),
                        reward: r,
                        center: c.clone(),
                        radius,
                    })
                    .collect()
            })
            .collect();
        ExtendedModel {
            states: Vec::new(),
            actions,
            span_bound,
            gamma: 1.0 - floor.max(1e-3),
            floor,
        }
    }

    pub fn exact(&self, floor: f64, span_bound: Option<f64>) -> ExtendedModel {
        self.extended(&self.kernel, 0.0, floor, span_bound)
    }
}

/// Random row on `n` entries, some of them zero.
pub fn random_center(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        return e;
    }
    w.iter().map(|x| x / total).collect()
}

pub fn span(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}
