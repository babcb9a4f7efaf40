//! Dyadic cells over the normalized cube `[0,1]^d` and the adaptive partition tree.
//!
//! Coordinates are ordered state-first: the first `d_S` entries of a point are
//! state coordinates, the remaining `d_A` are action coordinates. Distances use
//! the ℓ∞ metric, so a level-ℓ cell has diameter exactly `2^-ℓ`.
//!
//! Cells are half-open `[lo, hi)` per coordinate, except on the global upper
//! face `x = 1` which belongs to the last cell. This makes the active cells a
//! true partition of the cube.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a cell inside a [`PartitionTree`] arena.
pub type CellId = usize;

/// Hard upper bound on levels, so anchors fit in `u32` and S-cell indices in `u64`.
pub const LEVEL_LIMIT: u32 = 31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {point:?} lies outside the unit cube")]
    OutOfDomain { point: Vec<f64> },
    #[error("expected a point of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cell {0} is not active")]
    Inactive(CellId),
    #[error("cell {id} at level {level} reached the depth cap")]
    DepthCap { id: CellId, level: u32 },
    #[error("S-cell indices at level {level} do not fit in 64 bits for {dims} state dimensions")]
    IndexOverflow { level: u32, dims: usize },
}

/// State and action dimensions of the normalized space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
}

impl Dims {
    pub fn new(state: usize, action: usize) -> Self {
        Self { state, action }
    }

    pub fn total(&self) -> usize {
        self.state + self.action
    }
}

/// Dyadic coordinate of `x` at `level` under the half-open convention.
pub fn dyadic_coord(x: f64, level: u32) -> u32 {
    let n = 1u64 << level;
    // Scaling by a power of two is exact, so the floor is exact too.
    let k = (x * n as f64).floor();
    if k < 0.0 {
        0
    } else {
        (k as u64).min(n - 1) as u32
    }
}

/// Dyadic anchor of a point inside `[0,1]^k` at `level`.
pub fn dyadic_anchor(point: &[f64], level: u32) -> Result<Vec<u32>, GeometryError> {
    check_unit(point)?;
    Ok(point.iter().map(|&x| dyadic_coord(x, level)).collect())
}

/// Row-major (lexicographic) linear index of an anchor at `level`.
pub fn linear_index(anchor: &[u32], level: u32) -> u64 {
    anchor
        .iter()
        .fold(0u64, |acc, &a| (acc << level) | u64::from(a))
}

/// Inverse of [`linear_index`].
pub fn anchor_from_index(index: u64, level: u32, dims: usize) -> Vec<u32> {
    let mask = if level == 0 { 0 } else { (1u64 << level) - 1 };
    let mut anchor = vec![0u32; dims];
    let mut rest = index;
    for slot in anchor.iter_mut().rev() {
        *slot = (rest & mask) as u32;
        rest >>= level;
    }
    anchor
}

/// Center of the dyadic cube with the given anchor.
pub fn cube_center(anchor: &[u32], level: u32) -> Vec<f64> {
    let side = side_length(level);
    anchor
        .iter()
        .map(|&a| (f64::from(a) + 0.5) * side)
        .collect()
}

pub fn side_length(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

fn check_unit(point: &[f64]) -> Result<(), GeometryError> {
    if point.iter().all(|x| (0.0..=1.0).contains(x)) {
        Ok(())
    } else {
        Err(GeometryError::OutOfDomain {
            point: point.to_vec(),
        })
    }
}

/// Fails unless `2^(dims·level)` S-cells can be indexed with a `u64`.
pub fn check_index_width(level: u32, dims: usize) -> Result<(), GeometryError> {
    if (level as usize) * dims > 63 {
        Err(GeometryError::IndexOverflow { level, dims })
    } else {
        Ok(())
    }
}

/// Projection of a cell onto the state coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SCell {
    pub level: u32,
    pub anchor: Vec<u32>,
}

impl SCell {
    /// The level-`level` S-cell containing `state`.
    pub fn containing(state: &[f64], level: u32) -> Result<Self, GeometryError> {
        Ok(Self {
            level,
            anchor: dyadic_anchor(state, level)?,
        })
    }

    pub fn from_index(index: u64, level: u32, dims: usize) -> Self {
        Self {
            level,
            anchor: anchor_from_index(index, level, dims),
        }
    }

    pub fn index(&self) -> u64 {
        linear_index(&self.anchor, self.level)
    }

    pub fn representative(&self) -> Vec<f64> {
        cube_center(&self.anchor, self.level)
    }

    pub fn diameter(&self) -> f64 {
        side_length(self.level)
    }

    /// Whether `other` (at the same or a finer level) lies inside this S-cell.
    pub fn contains(&self, other: &SCell) -> bool {
        if other.level < self.level {
            return false;
        }
        let shift = other.level - self.level;
        self.anchor
            .iter()
            .zip(&other.anchor)
            .all(|(&a, &b)| b >> shift == a)
    }
}

/// A dyadic cube of the state-action space together with its visit accounting.
#[derive(Debug, Clone)]
pub struct Cell {
    pub level: u32,
    pub anchor: Vec<u32>,
    active: bool,
    parent: Option<CellId>,
    first_child: Option<CellId>,
    /// Visits while this cell itself was active.
    own_visits: u64,
    /// `N_t` of the parent at the moment it split; zero for the root.
    inherited_visits: u64,
    /// Own-epoch transition counts keyed by the level-ℓ destination S-cell index.
    transition_counts: BTreeMap<u64, u64>,
    /// Ancestral transitions re-binned at this cell's level, shared by siblings.
    inherited_counts: Arc<BTreeMap<u64, u64>>,
    /// Own-epoch destination states, flattened `d_S` at a time.
    destinations: Vec<f64>,
}

impl Cell {
    fn new(level: u32, anchor: Vec<u32>, parent: Option<CellId>) -> Self {
        Self {
            level,
            anchor,
            active: true,
            parent,
            first_child: None,
            own_visits: 0,
            inherited_visits: 0,
            transition_counts: BTreeMap::new(),
            inherited_counts: Arc::new(BTreeMap::new()),
            destinations: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn parent(&self) -> Option<CellId> {
        self.parent
    }

    pub fn side(&self) -> f64 {
        side_length(self.level)
    }

    /// ℓ∞ diameter, equal to the side length.
    pub fn diameter(&self) -> f64 {
        self.side()
    }

    /// `N_t(ζ)`: visits to this cell or its ancestors while they were the active container.
    pub fn visits(&self) -> u64 {
        self.own_visits + self.inherited_visits
    }

    pub fn own_visits(&self) -> u64 {
        self.own_visits
    }

    pub fn inherited_visits(&self) -> u64 {
        self.inherited_visits
    }

    /// Own-epoch transition counts, keyed by destination S-cell index at this level.
    pub fn transition_counts(&self) -> &BTreeMap<u64, u64> {
        &self.transition_counts
    }

    pub fn inherited_counts(&self) -> &BTreeMap<u64, u64> {
        &self.inherited_counts
    }

    /// `N_t(ζ, ξ)` for every level-ℓ S-cell ξ with a non-zero count.
    pub fn total_counts(&self) -> BTreeMap<u64, u64> {
        let mut total = (*self.inherited_counts).clone();
        for (&k, &n) in &self.transition_counts {
            *total.entry(k).or_insert(0) += n;
        }
        total
    }

    /// Cube center, used as `q(ζ)`.
    pub fn representative(&self) -> Vec<f64> {
        cube_center(&self.anchor, self.level)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.anchor.len()
            && point
                .iter()
                .zip(&self.anchor)
                .all(|(&x, &a)| (0.0..=1.0).contains(&x) && dyadic_coord(x, self.level) == a)
    }

    pub fn state_cell(&self, dims: Dims) -> SCell {
        SCell {
            level: self.level,
            anchor: self.anchor[..dims.state].to_vec(),
        }
    }

    /// Center of the action projection, `q(π_A(ζ))`.
    pub fn action_representative(&self, dims: Dims) -> Vec<f64> {
        cube_center(&self.anchor[dims.state..], self.level)
    }
}

/// Visit threshold at which an active cell is replaced by its children.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// `N_max(ζ) = C_a / diam(ζ)^(d_S+2)`.
    Practical { c_a: f64 },
    /// `N_max(ζ) = c₁·2^(d_S+2)·log(T/δ) / diam(ζ)^(d_S+2)`.
    Theoretical { c1: f64, horizon: u64, delta: f64 },
}

impl SplitRule {
    /// Real-valued `N_max` for a cell of the given level.
    pub fn n_max(&self, level: u32, state_dims: usize) -> f64 {
        let exponent = (state_dims + 2) as f64;
        let inv_diam_pow = (level as f64 * exponent).exp2();
        match *self {
            SplitRule::Practical { c_a } => c_a * inv_diam_pow,
            SplitRule::Theoretical { c1, horizon, delta } => {
                c1 * exponent.exp2() * (horizon as f64 / delta).ln() * inv_diam_pow
            }
        }
    }

    /// `N_min` of the theoretical activation rule; 1 for the root.
    pub fn n_min(&self, level: u32, state_dims: usize) -> f64 {
        if level == 0 {
            return 1.0;
        }
        let exponent = (state_dims + 2) as f64;
        self.n_max(level, state_dims) / exponent.exp2()
    }

    /// Integer visit count at which the split fires: `⌈N_max⌉`.
    pub fn split_at(&self, level: u32, state_dims: usize) -> u64 {
        (self.n_max(level, state_dims).ceil() as u64).max(1)
    }
}

/// One deactivation of a cell in favour of its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub cell: CellId,
    pub level: u32,
    pub anchor: Vec<u32>,
    pub visits: u64,
    pub threshold: u64,
}

/// The adaptive partition of `[0,1]^d` into active dyadic cells.
#[derive(Debug, Clone)]
pub struct PartitionTree {
    dims: Dims,
    rule: SplitRule,
    max_depth: u32,
    cells: Vec<Cell>,
    active: BTreeSet<CellId>,
    max_level: u32,
    splits: Vec<SplitEvent>,
}

impl PartitionTree {
    pub const ROOT: CellId = 0;

    pub fn new(dims: Dims, rule: SplitRule, max_depth: u32) -> Self {
        let max_depth = max_depth.min(LEVEL_LIMIT);
        let root = Cell::new(0, vec![0; dims.total()], None);
        Self {
            dims,
            rule,
            max_depth,
            cells: vec![root],
            active: BTreeSet::from([Self::ROOT]),
            max_level: 0,
            splits: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rule(&self) -> SplitRule {
        self.rule
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    /// `ℓ_max,t`, the finest level among active cells.
    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn active_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.active.iter().copied()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn splits(&self) -> &[SplitEvent] {
        &self.splits
    }

    /// Children of `id` in lexicographic anchor order, if it has split.
    pub fn children(&self, id: CellId) -> Option<std::ops::Range<CellId>> {
        self.cells[id]
            .first_child
            .map(|first| first..first + (1usize << self.dims.total()))
    }

    /// Chain from `id` up to the root, inclusive.
    pub fn ancestry(&self, id: CellId) -> impl Iterator<Item = CellId> + '_ {
        std::iter::successors(Some(id), move |&c| self.cells[c].parent)
    }

    /// The unique active cell containing `point`.
    pub fn locate(&self, point: &[f64]) -> Result<CellId, GeometryError> {
        let d = self.dims.total();
        if point.len() != d {
            return Err(GeometryError::Dimension {
                expected: d,
                got: point.len(),
            });
        }
        check_unit(point)?;
        let mut id = Self::ROOT;
        while !self.cells[id].active {
            let first = self.cells[id]
                .first_child
                .expect("inactive cell always has children");
            let level = self.cells[id].level + 1;
            let offset = point.iter().fold(0usize, |acc, &x| {
                (acc << 1) | (dyadic_coord(x, level) & 1) as usize
            });
            id = first + offset;
        }
        Ok(id)
    }

    /// Adds one visit and its destination state to an active cell's own counters.
    pub(crate) fn add_visit(
        &mut self,
        id: CellId,
        next_state: &[f64],
    ) -> Result<(), GeometryError> {
        let d_s = self.dims.state;
        if next_state.len() != d_s {
            return Err(GeometryError::Dimension {
                expected: d_s,
                got: next_state.len(),
            });
        }
        let cell = &self.cells[id];
        if !cell.active {
            return Err(GeometryError::Inactive(id));
        }
        let key = linear_index(&dyadic_anchor(next_state, cell.level)?, cell.level);
        let cell = &mut self.cells[id];
        cell.own_visits += 1;
        *cell.transition_counts.entry(key).or_insert(0) += 1;
        cell.destinations.extend_from_slice(next_state);
        Ok(())
    }

    /// Splits `id` if its visit count has reached `⌈N_max⌉`.
    pub fn maybe_split(&mut self, id: CellId) -> Result<bool, GeometryError> {
        let cell = &self.cells[id];
        if !cell.active {
            return Err(GeometryError::Inactive(id));
        }
        let threshold = self.rule.split_at(cell.level, self.dims.state);
        if cell.visits() < threshold {
            return Ok(false);
        }
        let visits = cell.visits();
        self.split(id)?;
        let cell = &self.cells[id];
        self.splits.push(SplitEvent {
            cell: id,
            level: cell.level,
            anchor: cell.anchor.clone(),
            visits,
            threshold,
        });
        Ok(true)
    }

    /// Unconditionally replaces the active cell `id` by its `2^d` children.
    pub fn split(&mut self, id: CellId) -> Result<(), GeometryError> {
        let cell = &self.cells[id];
        if !cell.active {
            return Err(GeometryError::Inactive(id));
        }
        if cell.level >= self.max_depth {
            return Err(GeometryError::DepthCap {
                id,
                level: cell.level,
            });
        }
        let child_level = cell.level + 1;
        check_index_width(child_level, self.dims.state)?;

        let inherited = Arc::new(self.history_counts(id, child_level));
        let inherited_visits = cell.visits();
        let parent_anchor = cell.anchor.clone();
        let d = self.dims.total();
        let first = self.cells.len();
        for offset in 0..(1usize << d) {
            let anchor = parent_anchor
                .iter()
                .enumerate()
                .map(|(i, &a)| 2 * a + ((offset >> (d - 1 - i)) & 1) as u32)
                .collect();
            let mut child = Cell::new(child_level, anchor, Some(id));
            child.inherited_visits = inherited_visits;
            child.inherited_counts = Arc::clone(&inherited);
            self.cells.push(child);
            self.active.insert(first + offset);
        }
        let cell = &mut self.cells[id];
        cell.active = false;
        cell.first_child = Some(first);
        self.active.remove(&id);
        self.max_level = self.max_level.max(child_level);
        Ok(())
    }

    /// Every destination recorded by `id` and its ancestors, binned at `level`.
    fn history_counts(&self, id: CellId, level: u32) -> BTreeMap<u64, u64> {
        let d_s = self.dims.state;
        let mut counts = BTreeMap::new();
        if d_s == 0 {
            return counts;
        }
        for c in self.ancestry(id) {
            for dest in self.cells[c].destinations.chunks_exact(d_s) {
                let anchor: Vec<u32> = dest.iter().map(|&x| dyadic_coord(x, level)).collect();
                *counts.entry(linear_index(&anchor, level)).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Active partition as text, one cell per line: `level anchor visits`.
    pub fn dump(&self) -> String {
        let mut out = String::from("# level anchor visits\n");
        for id in self.active_cells() {
            let c = &self.cells[id];
            let anchor: Vec<String> = c.anchor.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{} {} {}", c.level, anchor.join(","), c.visits());
        }
        out
    }
}

/// An action available in a discrete state, backed by the active cell that owns it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAction {
    pub cell: CellId,
    pub action: Vec<f64>,
}

/// `S_t` and `A_t(s)` derived from the active partition.
#[derive(Debug, Clone)]
pub struct DiscreteSpaces {
    /// `ℓ_max` of the grid the states live on.
    pub level: u32,
    /// Level-ℓ_max S-cells in lexicographic order.
    pub states: Vec<SCell>,
    /// Per state, the relevant active cells and their action representatives.
    pub actions: Vec<Vec<DiscreteAction>>,
}

impl DiscreteSpaces {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn representatives(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(SCell::representative).collect()
    }

    /// Index of the level-ℓ_max S-cell containing a normalized state.
    pub fn state_index(&self, state: &[f64]) -> Result<usize, GeometryError> {
        Ok(SCell::containing(state, self.level)?.index() as usize)
    }
}

/// Advances a mixed-radix counter with uniform radix `span`; false once it wraps.
fn advance(offset: &mut [u32], span: u32) -> bool {
    for slot in offset.iter_mut().rev() {
        *slot += 1;
        if *slot < span {
            return true;
        }
        *slot = 0;
    }
    false
}

pub fn discrete_spaces(tree: &PartitionTree) -> Result<DiscreteSpaces, GeometryError> {
    let dims = tree.dims();
    let level = tree.max_level();
    check_index_width(level, dims.state)?;
    let count = 1usize << (dims.state as u32 * level);
    let states = (0..count as u64)
        .map(|i| SCell::from_index(i, level, dims.state))
        .collect();
    let mut actions: Vec<Vec<DiscreteAction>> = vec![Vec::new(); count];

    for id in tree.active_cells() {
        let cell = tree.cell(id);
        let shift = level - cell.level;
        let span = 1u32 << shift;
        let base: Vec<u32> = cell.anchor[..dims.state]
            .iter()
            .map(|&a| a << shift)
            .collect();
        let action = cell.action_representative(dims);
        // Every level-ℓ_max descendant of the cell's S-projection.
        let mut offset = vec![0u32; dims.state];
        loop {
            let anchor: Vec<u32> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            actions[linear_index(&anchor, level) as usize].push(DiscreteAction {
                cell: id,
                action: action.clone(),
            });
            if !advance(&mut offset, span) {
                break;
            }
        }
    }
    Ok(DiscreteSpaces {
        level,
        states,
        actions,
    })
}
