//! Streaming-engine device model: a line of tiles, each time-sliced into
//! spoke slots that fire on cycles congruent to the slot index modulo II.
//!
//! Timing convention used everywhere in this crate: a value produced by a
//! node firing at cycle `f` reaches a consumer `h` tiles away at cycle
//! `f + exec_latency + h - 1`, and the consumer fires at the first cycle at
//! or after the latest such arrival whose residue modulo II is its slot.

mod mapping;
mod mask;
pub(crate) mod state;

use serde::{Deserialize, Serialize};

pub use mapping::{validate_mapping, MappedNode, Mapping, MappingReport, MappingViolation};
pub use mask::{check_placement, valid_action_mask, ActionMask, Constraint};
pub use state::{
    earliest_fire, place_node, retime, total_cycles, Placement, PlacementState, TimingMode,
};

use crate::ir::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("invalid device config: {0}")]
    Config(String),
    #[error("invalid placement of node {node} at (tile {tile}, slot {slot}): {reason}")]
    InvalidPlacement { node: NodeId, tile: usize, slot: usize, reason: Constraint },
    #[error("node {node} has unplaced predecessor {pred}")]
    UnplacedPredecessor { node: NodeId, pred: NodeId },
    #[error("node {0} is already placed")]
    AlreadyPlaced(NodeId),
    #[error("placement incomplete; unplaced nodes {0:?}")]
    Incomplete(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub num_tiles: usize,
    /// Spoke slots available per tile.
    pub num_slots: usize,
    /// Initiation interval; only slots `0..ii` are active.
    pub ii: usize,
    pub exec_latency: u64,
    /// When set, a predecessor must sit within this many tiles.
    pub reach_limit: Option<usize>,
    /// Magnitude of the dead-end penalty.
    pub lambda_penalty: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self { num_tiles: 16, num_slots: 6, ii: 3, exec_latency: 3, reach_limit: None, lambda_penalty: 100.0 }
    }
}

impl DeviceConfig {
    pub fn new(num_tiles: usize, num_slots: usize, ii: usize) -> Self {
        Self { num_tiles, num_slots, ii, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.num_tiles == 0 {
            return Err(DeviceError::Config("num_tiles must be at least 1".into()));
        }
        if self.ii == 0 || self.ii > self.num_slots {
            return Err(DeviceError::Config(format!(
                "ii must satisfy 1 <= ii <= num_slots ({}), got {}",
                self.num_slots, self.ii
            )));
        }
        if self.exec_latency == 0 {
            return Err(DeviceError::Config("exec_latency must be at least 1".into()));
        }
        if !(self.lambda_penalty > 0.0) {
            return Err(DeviceError::Config("lambda_penalty must be positive".into()));
        }
        Ok(())
    }

    /// Size of the tile-slice action space, `num_tiles * num_slots`.
    pub fn action_dim(&self) -> usize {
        self.num_tiles * self.num_slots
    }

    pub fn action(&self, index: usize) -> Action {
        Action { tile: index / self.num_slots, slot: index % self.num_slots }
    }

    pub fn action_index(&self, a: Action) -> usize {
        a.tile * self.num_slots + a.slot
    }

    /// Synchronous-fabric transfer latency between two tiles: one cycle per
    /// hop, zero for the tile's own feedback path.
    pub fn hop_latency(&self, src_tile: usize, dst_tile: usize) -> Result<u64, Unreachable> {
        let d = src_tile.abs_diff(dst_tile);
        match self.reach_limit {
            Some(limit) if d > limit => Err(Unreachable { src_tile, dst_tile }),
            _ => Ok(d as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("tile {dst_tile} is out of reach of tile {src_tile}")]
pub struct Unreachable {
    pub src_tile: usize,
    pub dst_tile: usize,
}

/// A tile-slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub tile: usize,
    pub slot: usize,
}

impl Action {
    pub fn new(tile: usize, slot: usize) -> Self {
        Self { tile, slot }
    }
}
