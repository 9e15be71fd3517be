//! Mapping documents and their replay-based validation.
//!
//! ```json
//! { "device": {"exec_latency": 3, "ii": 3, "num_slots": 6, "num_tiles": 16},
//!   "placements": { "0": {"fire_cycle": 0, "slot": 0, "tile": 3} },
//!   "total_cycles": 7 }
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::ir::{DataflowGraph, IrError, NodeId};

use super::mask::check_placement;
use super::state::{fire_with_mode, TimingMode};
use super::{DeviceConfig, Placement, PlacementState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappedNode {
    pub tile: usize,
    pub slot: usize,
    /// Optional on input (pinned placements); always present on output.
    pub fire_cycle: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub num_tiles: usize,
    pub num_slots: usize,
    pub ii: usize,
    pub exec_latency: u64,
    pub placements: BTreeMap<NodeId, MappedNode>,
    pub total_cycles: Option<u64>,
    /// Set when the producing episode hit a node with no legal placement.
    pub dead_end: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingDoc {
    device: DeviceDoc,
    placements: BTreeMap<String, NodeDoc>,
    #[serde(default)]
    total_cycles: Option<u64>,
    #[serde(default)]
    dead_end: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceDoc {
    num_tiles: usize,
    num_slots: usize,
    ii: usize,
    exec_latency: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    tile: usize,
    slot: usize,
    #[serde(default)]
    fire_cycle: Option<u64>,
}

impl Mapping {
    pub fn from_state(cfg: &DeviceConfig, state: &PlacementState, dead_end: bool) -> Self {
        let placements = state
            .placed()
            .map(|(n, p)| (n, MappedNode { tile: p.tile, slot: p.slot, fire_cycle: Some(p.fire_cycle) }))
            .collect();
        Self {
            num_tiles: cfg.num_tiles,
            num_slots: cfg.num_slots,
            ii: cfg.ii,
            exec_latency: cfg.exec_latency,
            placements,
            total_cycles: Some(state.makespan()),
            dead_end,
        }
    }

    /// Device config carrying this mapping's geometry; other fields take
    /// their defaults.
    pub fn device_config(&self) -> DeviceConfig {
        DeviceConfig {
            num_tiles: self.num_tiles,
            num_slots: self.num_slots,
            ii: self.ii,
            exec_latency: self.exec_latency,
            ..DeviceConfig::default()
        }
    }

    pub fn to_json(&self) -> String {
        let mut placements = Map::new();
        for (n, p) in &self.placements {
            let mut entry = Map::new();
            if let Some(f) = p.fire_cycle {
                entry.insert("fire_cycle".into(), json!(f));
            }
            entry.insert("slot".into(), json!(p.slot));
            entry.insert("tile".into(), json!(p.tile));
            placements.insert(n.to_string(), Value::Object(entry));
        }
        let mut doc = json!({
            "device": {
                "num_tiles": self.num_tiles,
                "num_slots": self.num_slots,
                "ii": self.ii,
                "exec_latency": self.exec_latency,
            },
            "placements": placements,
            "total_cycles": self.total_cycles,
        });
        if self.dead_end {
            doc["dead_end"] = json!(true);
        }
        let mut text = serde_json::to_string_pretty(&doc).expect("json values always serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, IrError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: MappingDoc = serde_path_to_error::deserialize(de)
            .map_err(|e| IrError::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
        let mut placements = BTreeMap::new();
        for (key, p) in doc.placements {
            let node: NodeId = key.parse().map_err(|_| IrError::Parse {
                path: format!("placements.{key}"),
                message: "placement keys must be node ids".into(),
            })?;
            placements.insert(node, MappedNode { tile: p.tile, slot: p.slot, fire_cycle: p.fire_cycle });
        }
        Ok(Self {
            num_tiles: doc.device.num_tiles,
            num_slots: doc.device.num_slots,
            ii: doc.device.ii,
            exec_latency: doc.device.exec_latency,
            placements,
            total_cycles: doc.total_cycles,
            dead_end: doc.dead_end,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingViolation {
    pub node: Option<NodeId>,
    /// Hardware rule number (1-3) when the violation is one of those rules.
    pub rule: Option<u8>,
    pub message: String,
}

impl fmt::Display for MappingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MappingReport {
    pub violations: Vec<MappingViolation>,
    pub fire_cycles: BTreeMap<NodeId, u64>,
    pub ready_times: BTreeMap<NodeId, u64>,
    /// Present when every node is placed.
    pub total_cycles: Option<u64>,
}

impl MappingReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = json!({
            "valid": self.is_valid(),
            "violations": self.violations.iter().map(|v| json!({
                "node": v.node, "rule": v.rule, "message": v.message,
            })).collect::<Vec<_>>(),
            "fire_cycles": self.fire_cycles.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<Map<_, _>>(),
            "ready_times": self.ready_times.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<Map<_, _>>(),
            "total_cycles": self.total_cycles,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("json values always serialize");
        text.push('\n');
        text
    }
}

/// Replays `mapping` in topological order, checking each placement against
/// the constraints in force at that point and recomputing timing.
pub fn validate_mapping(cfg: &DeviceConfig, g: &DataflowGraph, mapping: &Mapping) -> MappingReport {
    let mut report = MappingReport::default();
    let mut push = |node: Option<NodeId>, rule: Option<u8>, message: String| {
        report.violations.push(MappingViolation { node, rule, message })
    };

    if (mapping.num_tiles, mapping.num_slots, mapping.ii, mapping.exec_latency)
        != (cfg.num_tiles, cfg.num_slots, cfg.ii, cfg.exec_latency)
    {
        push(None, None, "device section does not match the device configuration".into());
    }
    for &n in mapping.placements.keys() {
        if n >= g.len() {
            push(Some(n), None, "node does not exist in graph".into());
        }
    }

    let mut state = PlacementState::new(cfg, g.len());
    for &node in g.topological_order() {
        let Some(m) = mapping.placements.get(&node) else {
            push(Some(node), None, "unplaced node".into());
            continue;
        };
        if m.tile >= cfg.num_tiles || m.slot >= cfg.num_slots {
            let c = if m.tile >= cfg.num_tiles { "tile out of range" } else { "slot out of range" };
            push(Some(node), None, c.into());
            continue;
        }
        if let Err(c) = check_placement(cfg, &state, g, node, m.tile, m.slot) {
            push(Some(node), c.rule(), c.to_string());
        }
        let fire = fire_with_mode(cfg, &state, g, node, m.tile, m.slot, TimingMode::PlacedOnly)
            .expect("placed-only timing never fails");
        if let Some(claimed) = m.fire_cycle {
            if claimed != fire {
                push(Some(node), None, format!("fire cycle mismatch: mapping says {claimed}, replay gives {fire}"));
            }
        }
        state.insert(node, Placement { tile: m.tile, slot: m.slot, fire_cycle: fire, ready_time: fire + cfg.exec_latency });
        report.fire_cycles.insert(node, fire);
        report.ready_times.insert(node, fire + cfg.exec_latency);
    }

    if state.is_complete() {
        let total = state.makespan();
        report.total_cycles = Some(total);
        if let Some(claimed) = mapping.total_cycles {
            if claimed != total && !mapping.dead_end {
                report.violations.push(MappingViolation {
                    node: None,
                    rule: None,
                    message: format!("total cycles mismatch: mapping says {claimed}, replay gives {total}"),
                });
            }
        }
    }
    report
}
