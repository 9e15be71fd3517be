use std::fmt;

use crate::ir::{DataflowGraph, NodeId};

use super::{DeviceConfig, PlacementState};

/// Why a tile-slice is not a legal home for a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    TileOutOfRange,
    SlotOutOfRange,
    Occupied { by: NodeId },
    /// Nodes sharing a tile-memory variable must share a tile.
    TileMemory { partner: NodeId, tile: usize },
    /// Two SDF-entry instructions may not share a tile.
    SdfStarts { other: NodeId },
    /// Two siblings may not share a tile.
    Siblings { sibling: NodeId },
    OutOfReach { pred: NodeId },
}

impl Constraint {
    /// 1-3 for the three hardware placement rules, `None` otherwise.
    pub fn rule(&self) -> Option<u8> {
        match self {
            Constraint::TileMemory { .. } => Some(1),
            Constraint::SdfStarts { .. } => Some(2),
            Constraint::Siblings { .. } => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::TileOutOfRange => write!(f, "tile out of range"),
            Constraint::SlotOutOfRange => write!(f, "slot out of range"),
            Constraint::Occupied { by } => write!(f, "tile-slice occupied by node {by}"),
            Constraint::TileMemory { partner, tile } => {
                write!(f, "constraint 1: shares tile memory with node {partner} on tile {tile}")
            }
            Constraint::SdfStarts { other } => write!(f, "constraint 2: SDF start node {other} already on tile"),
            Constraint::Siblings { sibling } => write!(f, "constraint 3: sibling node {sibling} already on tile"),
            Constraint::OutOfReach { pred } => write!(f, "predecessor {pred} out of reach"),
        }
    }
}

/// Binary mask over tile-slices, indexed `tile * num_slots + slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    bits: Vec<bool>,
    num_slots: usize,
}

impl ActionMask {
    pub fn full(cfg: &DeviceConfig) -> Self {
        Self { bits: vec![true; cfg.action_dim()], num_slots: cfg.num_slots }
    }

    pub fn from_bits(bits: Vec<bool>, num_slots: usize) -> Self {
        Self { bits, num_slots }
    }

    pub fn get(&self, tile: usize, slot: usize) -> bool {
        slot < self.num_slots && self.bits.get(tile * self.num_slots + slot).copied().unwrap_or(false)
    }

    /// Bit at a flat action index.
    pub fn allows(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when no action is allowed.
    pub fn is_dead_end(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Reasons tied to the tile alone (independent of slot).
fn tile_check(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
) -> Result<(), Constraint> {
    for &partner in g.memory_partners(node) {
        if let Some(p) = state.placement(partner) {
            if p.tile != tile {
                return Err(Constraint::TileMemory { partner, tile: p.tile });
            }
        }
    }
    if g.is_sdf_start(node) {
        for s in 0..cfg.num_slots {
            if let Some(other) = state.occupant(tile, s) {
                if other != node && g.is_sdf_start(other) {
                    return Err(Constraint::SdfStarts { other });
                }
            }
        }
    }
    for &sibling in g.siblings(node) {
        if state.placement(sibling).is_some_and(|p| p.tile == tile) {
            return Err(Constraint::Siblings { sibling });
        }
    }
    if let Some(limit) = cfg.reach_limit {
        for &pred in g.preds(node) {
            if state.placement(pred).is_some_and(|p| p.tile.abs_diff(tile) > limit) {
                return Err(Constraint::OutOfReach { pred });
            }
        }
    }
    Ok(())
}

/// First constraint violated by putting `node` at `(tile, slot)`.
pub fn check_placement(
    cfg: &DeviceConfig,
    state: &PlacementState,
    g: &DataflowGraph,
    node: NodeId,
    tile: usize,
    slot: usize,
) -> Result<(), Constraint> {
    if tile >= cfg.num_tiles {
        return Err(Constraint::TileOutOfRange);
    }
    if slot >= cfg.ii || slot >= cfg.num_slots {
        return Err(Constraint::SlotOutOfRange);
    }
    if let Some(by) = state.occupant(tile, slot) {
        return Err(Constraint::Occupied { by });
    }
    tile_check(cfg, state, g, node, tile)
}

pub fn valid_action_mask(cfg: &DeviceConfig, state: &PlacementState, g: &DataflowGraph, node: NodeId) -> ActionMask {
    let mut bits = vec![false; cfg.action_dim()];
    for tile in 0..cfg.num_tiles {
        if tile_check(cfg, state, g, node, tile).is_err() {
            continue;
        }
        for slot in 0..cfg.ii.min(cfg.num_slots) {
            bits[tile * cfg.num_slots + slot] = state.occupant(tile, slot).is_none();
        }
    }
    ActionMask { bits, num_slots: cfg.num_slots }
}
