//! Transition-kernel estimates per active cell and their confidence radii.
//!
//! A cell's raw estimate lives on the S-cells of its own level. It is extended
//! to the continuum by spreading each S-cell's mass uniformly (Lebesgue
//! proportional) and then re-binned on the finest grid `ℓ_max`. For dyadic
//! cubes that reduces to splitting each mass equally among its
//! `2^(d_S·(ℓ_max−ℓ))` descendants.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    anchor_from_index, linear_index, CellId, GeometryError, PartitionTree, SCell,
};

/// A row of the extended model: estimate, L1 budget and floor over `S_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub center: Vec<f64>,
    pub radius: f64,
    pub floor: f64,
    pub owner: CellId,
}

/// How `η_t(ζ)` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadiusRule {
    /// `min{2, C_η·diam(ζ)}`.
    Practical { c_eta: f64 },
    /// `min{2, (4−α)(c₁ log(T/δ)/N)^(1/(d_S+2)) + (3L_p + C_v)·diam(ζ)}`.
    Theoretical {
        alpha: f64,
        c1: f64,
        horizon: u64,
        delta: f64,
        l_p: f64,
        c_v: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOutcome {
    pub cell: CellId,
    pub split: bool,
}

/// Logs a transition `z → s_next` into the active cell containing `z` and
/// splits it when its visit count reaches the threshold.
pub fn record_transition(
    tree: &mut PartitionTree,
    z: &[f64],
    s_next: &[f64],
) -> Result<RecordOutcome, GeometryError> {
    let cell = tree.locate(z)?;
    tree.add_visit(cell, s_next)?;
    let split = match tree.maybe_split(cell) {
        Ok(split) => split,
        Err(GeometryError::DepthCap { id, level }) => {
            warn!("cell {id} at level {level} hit the depth cap; not splitting");
            false
        }
        Err(e) => return Err(e),
    };
    Ok(RecordOutcome { cell, split })
}

/// `p̂⁽ᵈ⁾(ζ, ·)`: counts over level-ℓ(ζ) S-cells divided by `1 ∨ N_t(ζ)`.
pub fn raw_estimate(tree: &PartitionTree, cell: CellId) -> BTreeMap<u64, f64> {
    let c = tree.cell(cell);
    let denom = c.visits().max(1) as f64;
    c.total_counts()
        .into_iter()
        .map(|(k, n)| (k, n as f64 / denom))
        .collect()
}

/// Spreads a distribution over level-`from` S-cells onto the dense level-`to` grid.
pub fn rediscretize(raw: &BTreeMap<u64, f64>, state_dims: usize, from: u32, to: u32) -> Vec<f64> {
    assert!(to >= from, "cannot rediscretize to a coarser level");
    let shift = to - from;
    let span = 1u32 << shift;
    let per_child = (-((state_dims as u32 * shift) as f64)).exp2();
    let mut dense = vec![0.0; 1usize << (state_dims as u32 * to)];
    for (&key, &mass) in raw {
        if mass == 0.0 {
            continue;
        }
        let base: Vec<u32> = anchor_from_index(key, from, state_dims)
            .into_iter()
            .map(|a| a << shift)
            .collect();
        let share = mass * per_child;
        let mut offset = vec![0u32; state_dims];
        'cells: loop {
            let anchor: Vec<u32> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            dense[linear_index(&anchor, to) as usize] += share;
            for slot in offset.iter_mut().rev() {
                *slot += 1;
                if *slot < span {
                    continue 'cells;
                }
                *slot = 0;
            }
            break;
        }
    }
    dense
}

/// `η_t(ζ)`.
pub fn confidence_radius(tree: &PartitionTree, cell: CellId, rule: &RadiusRule) -> f64 {
    let c = tree.cell(cell);
    radius_for(c.visits(), c.diameter(), tree.dims().state, rule)
}

/// `η` for a cell with `visits` and `diameter`; 2 when the cell is unvisited.
pub fn radius_for(visits: u64, diameter: f64, state_dims: usize, rule: &RadiusRule) -> f64 {
    if visits == 0 {
        return 2.0;
    }
    match *rule {
        RadiusRule::Practical { c_eta } => (c_eta * diameter).min(2.0),
        RadiusRule::Theoretical {
            alpha,
            c1,
            horizon,
            delta,
            l_p,
            c_v,
        } => {
            let log_term = (horizon as f64 / delta).ln();
            let stat = (c1 * log_term / visits as f64).powf(1.0 / (state_dims as f64 + 2.0));
            ((4.0 - alpha) * stat + (3.0 * l_p + c_v) * diameter).min(2.0)
        }
    }
}

/// The full row for `cell` on the level-`grid_level` state grid.
pub fn kernel_row(
    tree: &PartitionTree,
    cell: CellId,
    grid_level: u32,
    rule: &RadiusRule,
    floor: f64,
) -> KernelRow {
    let level = tree.cell(cell).level;
    let raw = raw_estimate(tree, cell);
    KernelRow {
        center: rediscretize(&raw, tree.dims().state, level, grid_level),
        radius: confidence_radius(tree, cell, rule),
        floor,
        owner: cell,
    }
}

/// The level-ℓ(ζ) S-cell that a destination state is binned into for `cell`.
pub fn destination_cell(
    tree: &PartitionTree,
    cell: CellId,
    s_next: &[f64],
) -> Result<SCell, GeometryError> {
    SCell::containing(s_next, tree.cell(cell).level)
}
