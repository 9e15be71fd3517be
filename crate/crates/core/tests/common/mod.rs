//! Reference implementations written against the raw IR, sharing no code
//! with the library's timing or masking.

#![allow(dead_code)]

use std::collections::BTreeMap;

use se_mapper::device::DeviceConfig;
use se_mapper::ir::IrGraph;

/// A value travelling one tile per cycle toward its consumer.
struct Token {
    consumer: usize,
    pos: usize,
    dst: usize,
    /// Cycle at which the value leaves the producer's tile.
    emerge: u64,
    /// Last cycle `pos` was updated for; `None` until it emerges.
    at: Option<u64>,
    arrived: Option<u64>,
}

/// Steps a global clock: on cycle `c` every tile's spoke `c mod ii` fires
/// its node once all input tokens have arrived. Returns fire cycles and
/// the makespan, or `None` if some node never fires.
pub fn simulate(cfg: &DeviceConfig, g: &IrGraph, placements: &BTreeMap<usize, (usize, usize)>) -> Option<(Vec<u64>, u64)> {
    let n = g.nodes.len();
    let mut inputs = vec![0usize; n];
    for &(_, v) in &g.edges {
        inputs[v] += 1;
    }
    let mut fired: Vec<Option<u64>> = vec![None; n];
    let mut tokens: Vec<Token> = Vec::new();
    let limit = 64 * (n as u64 + 1) * (cfg.exec_latency + cfg.num_tiles as u64 + cfg.ii as u64);
    for c in 0..limit {
        for t in tokens.iter_mut().filter(|t| t.arrived.is_none()) {
            if t.emerge > c {
                continue;
            }
            if t.at.is_none() {
                t.at = Some(t.emerge);
            }
            while t.pos != t.dst && t.at.unwrap() < c {
                t.pos = if t.dst > t.pos { t.pos + 1 } else { t.pos - 1 };
                t.at = Some(t.at.unwrap() + 1);
            }
            if t.pos == t.dst {
                t.arrived = Some(t.at.unwrap());
            }
        }
        for node in 0..n {
            if fired[node].is_some() {
                continue;
            }
            let (tile, slot) = placements[&node];
            if c % cfg.ii as u64 != slot as u64 {
                continue;
            }
            let ready = tokens.iter().filter(|t| t.consumer == node && t.arrived.is_some_and(|a| a <= c)).count();
            if ready < inputs[node] {
                continue;
            }
            fired[node] = Some(c);
            for &(u, v) in &g.edges {
                if u == node {
                    let (dst, _) = placements[&v];
                    tokens.push(Token { consumer: v, pos: tile, dst, emerge: c + cfg.exec_latency - 1, at: None, arrived: None });
                }
            }
        }
        if fired.iter().all(Option::is_some) {
            let fires: Vec<u64> = fired.into_iter().map(Option::unwrap).collect();
            let total = fires.iter().map(|f| f + cfg.exec_latency).max().unwrap_or(0);
            return Some((fires, total));
        }
    }
    None
}

/// Whether `node` may go on `(tile, slot)` next to `placed`, read straight
/// off the hardware rules.
pub fn legal(cfg: &DeviceConfig, g: &IrGraph, placed: &BTreeMap<usize, (usize, usize)>, node: usize, tile: usize, slot: usize) -> bool {
    if tile >= cfg.num_tiles || slot >= cfg.ii {
        return false;
    }
    if placed.values().any(|&p| p == (tile, slot)) {
        return false;
    }
    let preds = |v: usize| g.edges.iter().filter(move |e| e.1 == v).map(|e| e.0);
    let is_start = |v: usize| preds(v).next().is_none();
    for (&other, &(t, _)) in placed {
        if other == node {
            continue;
        }
        let shares_var = g.nodes[node].tile_memory_vars.intersection(&g.nodes[other].tile_memory_vars).next().is_some();
        if shares_var && t != tile {
            return false;
        }
        if t == tile && is_start(node) && is_start(other) {
            return false;
        }
        let siblings = preds(node).any(|p| preds(other).any(|q| q == p));
        if t == tile && siblings {
            return false;
        }
    }
    if let Some(limit) = cfg.reach_limit {
        for p in preds(node) {
            if let Some(&(t, _)) = placed.get(&p) {
                if t.abs_diff(tile) > limit {
                    return false;
                }
            }
        }
    }
    true
}

/// Fire cycle from the arrival formula alone, for hand checks.
pub fn formula_fire(cfg: &DeviceConfig, pred_fires: &[(u64, usize)], tile: usize, slot: usize) -> u64 {
    let lower = pred_fires
        .iter()
        .map(|&(f, t)| f + cfg.exec_latency + t.abs_diff(tile) as u64 - 1)
        .max()
        .unwrap_or(0);
    (lower..).find(|c| c % cfg.ii as u64 == slot as u64).unwrap()
}
