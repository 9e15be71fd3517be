use crate::ir::{DataflowGraph, NodeId};

use super::mask::check_placement;
use super::{DeviceConfig, DeviceError};

/// Where a node sits and when it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub tile: usize,
    pub slot: usize,
    pub fire_cycle: u64,
    pub ready_time: u64,
}

/// Partial or complete assignment of nodes to tile-slices. Updates return a
/// new state; the previous one stays valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementState {
    placements: Vec<Option<Placement>>,
    occupancy: Vec<Option<NodeId>>,
    num_slots: usize,
}

impl PlacementState {
    pub fn new(cfg: &DeviceConfig, num_nodes: usize) -> Self {
        Self { placements: vec![None; num_nodes], occupancy: vec![None; cfg.action_dim()], num_slots: cfg.num_slots }
    }

    pub fn placement(&self, node: NodeId) -> Option<&Placement> {
        self.placements[node].as_ref()
    }

    pub fn is_placed(&self, node: NodeId) -> bool {
        self.placements[node].is_some()
    }

    pub fn occupant(&self, tile: usize, slot: usize) -> Option<NodeId> {
        self.occupancy[tile * self.num_slots + slot]
    }

    /// Occupant per tile-slice, indexed `tile * num_slots + slot`.
    pub fn occupancy(&self) -> &[Option<NodeId>] {
        &self.occupancy
    }

    pub fn num_nodes(&self) -> usize {
        self.placements.len()
    }

    pub fn placed_count(&self) -> usize {
        self.placements.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.placements.iter().all(Option::is_some)
    }

    pub fn unplaced(&self) -> Vec<NodeId> {
        (0..self.placements.len()).filter(|&n| self.placements[n].is_none()).collect()
    }

    pub fn placed(&self) -> impl Iterator<Item = (NodeId, &Placement)> {
        self.placements.iter().enumerate().filter_map(|(n, p)| p.as_ref().map(|p| (n, p)))
    }

    /// Latest ready time among placed nodes, 0 if nothing is placed.
    pub fn makespan(&self) -> u64 {
        self.placed().map(|(_, p)| p.ready_time).max().unwrap_or(0)
    }

    /// Copy of this state with `node` lifted off the device.
    pub fn without(&self, node: NodeId) -> Self {
        let mut next = self.clone();
        if let Some(p) = next.placements[node].take() {
            next.occupancy[p.tile * self.num_slots + p.slot] = None;
        }
        next
    }

    /// Records a placement without checking constraints. The caller owns
    /// the timing; a prior occupant of the slice keeps its own placement.
    pub(crate) fn insert(&mut self, node: NodeId, p: Placement) {
        if let Some(old) = self.placements[node].take() {
            let idx = old.tile * self.num_slots + old.slot;
            if self.occupancy[idx] == Some(node) {
                self.occupancy[idx] = None;
            }
        }
        if p.tile * self.num_slots + p.slot < self.occupancy.len() {
            self.occupancy[p.tile * self.num_slots + p.slot] = Some(node);
        }
        self.placements[node] = Some(p);
    }
}

/// How unplaced predecessors are treated when computing a fire cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    /// Every predecessor must already be placed.
    Strict,
    /// Unplaced predecessors contribute no arrival bound.
    PlacedOnly,
}

fn lower_bound(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    mode: TimingMode,
) -> Result<u64, DeviceError> {
    let mut bound = 0;
    for &pred in g.preds(node) {
        match state.placement(pred) {
            Some(p) => {
                let hop = p.tile.abs_diff(tile) as u64;
                bound = bound.max(p.fire_cycle + cfg.exec_latency + hop - 1);
            }
            None if mode == TimingMode::Strict => return Err(DeviceError::UnplacedPredecessor { node, pred }),
            None => {}
        }
    }
    Ok(bound)
}

fn next_congruent(bound: u64, slot: usize, ii: usize) -> u64 {
    let ii = ii as u64;
    bound + (slot as u64 + ii - bound % ii) % ii
}

/// First cycle at or after the latest operand arrival whose residue modulo
/// II equals `slot`.
pub fn earliest_fire(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    slot: usize,
) -> Result<u64, DeviceError> {
    let bound = lower_bound(cfg, state, g, node, tile, TimingMode::Strict)?;
    Ok(next_congruent(bound, slot, cfg.ii))
}

pub(crate) fn fire_with_mode(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    slot: usize,
    mode: TimingMode,
) -> Result<u64, DeviceError> {
    let bound = lower_bound(cfg, state, g, node, tile, mode)?;
    Ok(next_congruent(bound, slot, cfg.ii.max(1)))
}

/// Places `node` if the tile-slice passes every constraint, returning the
/// extended state.
pub fn place_node(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    slot: usize,
) -> Result<PlacementState, DeviceError> {
    place_with_mode(cfg, state, g, node, tile, slot, TimingMode::Strict)
}

pub(crate) fn place_with_mode(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    slot: usize,
    mode: TimingMode,
) -> Result<PlacementState, DeviceError> {
    if state.is_placed(node) {
        return Err(DeviceError::AlreadyPlaced(node));
    }
    check_placement(cfg, state, g, node, tile, slot)
        .map_err(|reason| DeviceError::InvalidPlacement { node, tile, slot, reason })?;
    let fire_cycle = fire_with_mode(cfg, state, g, node, tile, slot, mode)?;
    let mut next = state.clone();
    next.insert(node, Placement { tile, slot, fire_cycle, ready_time: fire_cycle + cfg.exec_latency });
    Ok(next)
}

/// Recomputes every fire cycle in topological order, keeping tile and slot
/// assignments. Used after out-of-order placement.
pub fn retime(cfg: &DeviceConfig, g: &DataflowGraph, state: &PlacementState) -> PlacementState {
    let mut out = state.clone();
    for &n in g.topological_order() {
        if let Some(p) = state.placement(n).copied() {
            let fire = fire_with_mode(cfg, &out, g, n, p.tile, p.slot, TimingMode::PlacedOnly)
                .expect("placed-only timing never fails");
            out.insert(n, Placement { fire_cycle: fire, ready_time: fire + cfg.exec_latency, ..p });
        }
    }
    out
}

/// Cycle at which the last node's output is ready.
pub fn total_cycles(_cfg: &DeviceConfig, state: &PlacementState, _g: &DataflowGraph) -> Result<u64, DeviceError> {
    let unplaced = state.unplaced();
    if !unplaced.is_empty() {
        return Err(DeviceError::Incomplete(unplaced));
    }
    Ok(state.makespan())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::IrGraph;

    fn chain(n: usize) -> DataflowGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        DataflowGraph::new(IrGraph::from_edges("chain", n, &edges)).unwrap()
    }

    #[test]
    fn consumer_two_hops_away_lands_on_slot_one() {
        let cfg = DeviceConfig::default();
        let g = chain(2);
        let s0 = PlacementState::new(&cfg, 2);
        let s1 = place_node(&cfg, &s0, &g, 0, 3, 0).unwrap();
        assert_eq!(s1.placement(0).map(|p| (p.fire_cycle, p.ready_time)), Some((0, 3)));
        assert_eq!(earliest_fire(&cfg, &s1, &g, 1, 1, 1).unwrap(), 4);
        let s2 = place_node(&cfg, &s1, &g, 1, 1, 1).unwrap();
        assert_eq!(s2.placement(1).map(|p| (p.fire_cycle, p.ready_time)), Some((4, 7)));
        assert_eq!(total_cycles(&cfg, &s2, &g).unwrap(), 7);
        // prior state untouched
        assert!(!s1.is_placed(1));
        let err = place_node(&cfg, &s1, &g, 1, 3, 0).unwrap_err();
        assert!(err.to_string().contains("occupied"), "{err}");
    }

    #[test]
    fn source_fire_matches_slot() {
        let cfg = DeviceConfig::default();
        let g = chain(1);
        let s = PlacementState::new(&cfg, 1);
        assert_eq!(earliest_fire(&cfg, &s, &g, 0, 0, 0).unwrap(), 0);
        assert_eq!(earliest_fire(&cfg, &s, &g, 0, 0, 2).unwrap(), 2);
        let s = place_node(&cfg, &s, &g, 0, 0, 0).unwrap();
        assert_eq!(total_cycles(&cfg, &s, &g).unwrap(), 3);
    }

    #[test]
    fn unplaced_pred_and_incomplete() {
        let cfg = DeviceConfig::default();
        let g = chain(2);
        let s = PlacementState::new(&cfg, 2);
        assert!(matches!(
            earliest_fire(&cfg, &s, &g, 1, 0, 0),
            Err(DeviceError::UnplacedPredecessor { node: 1, pred: 0 })
        ));
        assert!(matches!(total_cycles(&cfg, &s, &g), Err(DeviceError::Incomplete(v)) if v == vec![0, 1]));
    }

    #[test]
    fn retime_restores_strict_timing() {
        let cfg = DeviceConfig::default();
        let g = chain(3);
        let s = PlacementState::new(&cfg, 3);
        let s = place_with_mode(&cfg, &s, &g, 2, 5, 2, TimingMode::PlacedOnly).unwrap();
        let s = place_with_mode(&cfg, &s, &g, 0, 0, 0, TimingMode::PlacedOnly).unwrap();
        let s = place_with_mode(&cfg, &s, &g, 1, 2, 1, TimingMode::PlacedOnly).unwrap();
        assert_eq!(s.placement(2).unwrap().fire_cycle, 2);
        let fixed = retime(&cfg, &g, &s);
        let strict = {
            let t = PlacementState::new(&cfg, 3);
            let t = place_node(&cfg, &t, &g, 0, 0, 0).unwrap();
            let t = place_node(&cfg, &t, &g, 1, 2, 1).unwrap();
            place_node(&cfg, &t, &g, 2, 5, 2).unwrap()
        };
        assert_eq!(fixed, strict);
    }
}
