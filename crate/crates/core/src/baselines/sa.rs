use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{retime, valid_action_mask, DeviceConfig, Mapping, Placement, PlacementState};
use crate::env::{run_episode, schedule_return, EnvOptions, MappingEnv, RandomPolicy};
use crate::ir::DataflowGraph;

use super::{greedy_state, BaselineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaObjective {
    /// Makespan; incomplete assignments score makespan + λ.
    #[default]
    Cycles,
    /// Negated schedule return, the quantity the RL agent maximizes.
    Return,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaConfig {
    pub initial_temperature: f64,
    /// Geometric cooling factor α.
    pub cooling: f64,
    pub steps: usize,
    pub seed: u64,
    pub objective: SaObjective,
    /// Random restarts tried when the greedy start dead-ends.
    pub max_restarts: usize,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self { initial_temperature: 10.0, cooling: 0.995, steps: 20_000, seed: 0, objective: SaObjective::Cycles, max_restarts: 100 }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.initial_temperature > 0.0) {
            return Err(BaselineError::Config("initial_temperature must be positive".into()));
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(BaselineError::Config("cooling must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub temperature: f64,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct SaResult {
    pub mapping: Mapping,
    pub best_objective: f64,
    pub best_cycles: u64,
    pub trace: Vec<TracePoint>,
}

fn objective(cfg: &DeviceConfig, g: &DataflowGraph, state: &PlacementState, mode: SaObjective) -> f64 {
    let penalty = if state.is_complete() { 0.0 } else { cfg.lambda_penalty };
    match mode {
        SaObjective::Cycles => state.makespan() as f64 + penalty,
        SaObjective::Return => -schedule_return(g, state) + penalty,
    }
}

fn initial_state(g: &DataflowGraph, cfg: &DeviceConfig, sa: &SaConfig, rng: &mut ChaCha8Rng) -> Result<PlacementState, BaselineError> {
    if let Ok(s) = greedy_state(g, cfg) {
        return Ok(s);
    }
    let graph = Arc::new(g.clone());
    for _ in 0..sa.max_restarts {
        let mut env = MappingEnv::new(Arc::clone(&graph), cfg.clone(), EnvOptions::default())?;
        let seed = rng.random();
        let ep = run_episode(&mut RandomPolicy, &mut env, seed, rng).expect("random policy respects the mask");
        if !ep.dead_end {
            return Ok(env.state().clone());
        }
    }
    Err(BaselineError::Infeasible(sa.max_restarts + 1))
}

/// Reassigns one node to a random tile-slice that is legal given every
/// other placement, then recomputes fire cycles. `None` if the node has
/// nowhere else to go.
fn neighbour(g: &DataflowGraph, cfg: &DeviceConfig, state: &PlacementState, rng: &mut ChaCha8Rng) -> Option<PlacementState> {
    let node = rng.random_range(0..g.len());
    let current = *state.placement(node)?;
    let rest = state.without(node);
    let mask = valid_action_mask(cfg, &rest, g, node);
    let candidates: Vec<usize> = mask
        .valid_indices()
        .filter(|&i| {
            let a = cfg.action(i);
            (a.tile, a.slot) != (current.tile, current.slot)
                && g.succs(node).iter().all(|&s| {
                    rest.placement(s).is_none_or(|p| cfg.hop_latency(a.tile, p.tile).is_ok())
                })
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let a = cfg.action(candidates[rng.random_range(0..candidates.len())]);
    let mut next = rest;
    next.insert(node, Placement { tile: a.tile, slot: a.slot, fire_cycle: 0, ready_time: 0 });
    Some(retime(cfg, g, &next))
}

/// Anneals from the greedy assignment with single-node moves inside the
/// legal action space and returns the best mapping seen.
pub fn simulated_annealing(g: &DataflowGraph, cfg: &DeviceConfig, sa: &SaConfig) -> Result<SaResult, BaselineError> {
    cfg.validate()?;
    sa.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sa.seed);
    let mut state = initial_state(g, cfg, sa, &mut rng)?;
    let mut cost = objective(cfg, g, &state, sa.objective);
    let mut best = (cost, state.clone());
    let mut temperature = sa.initial_temperature;
    let mut trace = Vec::with_capacity(sa.steps + 1);
    trace.push(TracePoint { step: 0, temperature, objective: cost, best: cost });
    for step in 1..=sa.steps {
        if let Some(next) = neighbour(g, cfg, &state, &mut rng) {
            let next_cost = objective(cfg, g, &next, sa.objective);
            let delta = next_cost - cost;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp() {
                state = next;
                cost = next_cost;
                if cost < best.0 {
                    best = (cost, state.clone());
                }
            }
        }
        temperature *= sa.cooling;
        trace.push(TracePoint { step, temperature, objective: cost, best: best.0 });
    }
    let (best_objective, best_state) = best;
    Ok(SaResult {
        mapping: Mapping::from_state(cfg, &best_state, !best_state.is_complete()),
        best_objective,
        best_cycles: best_state.makespan(),
        trace,
    })
}

pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,temperature,objective,best")?;
    for t in trace {
        writeln!(f, "{},{},{},{}", t.step, t.temperature, t.objective, t.best)?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::validate_mapping;
    use crate::ir::IrGraph;

    #[test]
    fn single_node_is_immediately_optimal() {
        let cfg = DeviceConfig::default();
        let g = DataflowGraph::new(IrGraph::from_edges("one", 1, &[])).unwrap();
        let r = simulated_annealing(&g, &cfg, &SaConfig { steps: 50, ..Default::default() }).unwrap();
        assert_eq!(r.best_cycles, cfg.exec_latency);
        assert_eq!(r.trace[0].best, 3.0);
    }

    #[test]
    fn best_is_monotone_and_mapping_valid() {
        let cfg = DeviceConfig::new(4, 2, 2);
        let g = DataflowGraph::new(IrGraph::from_edges("d", 4, &[(0, 1), (0, 2), (1, 3), (2, 3)])).unwrap();
        for mode in [SaObjective::Cycles, SaObjective::Return] {
            let r = simulated_annealing(&g, &cfg, &SaConfig { steps: 2000, seed: 3, objective: mode, ..Default::default() })
                .unwrap();
            assert!(r.trace.windows(2).all(|w| w[1].best <= w[0].best));
            let report = validate_mapping(&cfg, &g, &r.mapping);
            assert!(report.is_valid(), "{:?}", report.violations);
            assert_eq!(report.total_cycles, Some(r.best_cycles));
        }
    }

    #[test]
    fn rejects_bad_cooling() {
        let g = DataflowGraph::new(IrGraph::from_edges("one", 1, &[])).unwrap();
        let sa = SaConfig { cooling: 1.0, ..Default::default() };
        assert!(simulated_annealing(&g, &DeviceConfig::default(), &sa).is_err());
    }
}
