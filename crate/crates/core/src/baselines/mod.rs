//! Non-learning mappers: greedy list scheduling, simulated annealing, and
//! exhaustive search for small instances.

mod sa;

use crate::device::{earliest_fire, place_node, valid_action_mask, DeviceConfig, Mapping, PlacementState};
use crate::ir::{DataflowGraph, NodeId};

pub use sa::{simulated_annealing, write_trace_csv, SaConfig, SaObjective, SaResult, TracePoint};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("dead end: node {0} has no legal tile-slice")]
    DeadEnd(NodeId),
    #[error("infeasible instance: no complete assignment found after {0} attempts")]
    Infeasible(usize),
    #[error("search space too large: about {estimate:.3e} states exceeds the limit of {limit:.3e}")]
    TooLarge { estimate: f64, limit: f64 },
    #[error("invalid annealing config: {0}")]
    Config(String),
    #[error(transparent)]
    Device(#[from] crate::device::DeviceError),
}

/// Places nodes in topological order, each on the legal tile-slice with the
/// earliest fire cycle (lowest tile, then slot, on ties).
pub fn greedy_schedule(g: &DataflowGraph, cfg: &DeviceConfig) -> Result<Mapping, BaselineError> {
    Ok(Mapping::from_state(cfg, &greedy_state(g, cfg)?, false))
}

pub(crate) fn greedy_state(g: &DataflowGraph, cfg: &DeviceConfig) -> Result<PlacementState, BaselineError> {
    cfg.validate()?;
    let mut state = PlacementState::new(cfg, g.len());
    for &node in g.topological_order() {
        let mask = valid_action_mask(cfg, &state, g, node);
        let mut best: Option<(u64, usize)> = None;
        for i in mask.valid_indices() {
            let a = cfg.action(i);
            let fire = earliest_fire(cfg, &state, g, node, a.tile, a.slot)?;
            if best.is_none_or(|(f, _)| fire < f) {
                best = Some((fire, i));
            }
        }
        let (_, i) = best.ok_or(BaselineError::DeadEnd(node))?;
        let a = cfg.action(i);
        state = place_node(cfg, &state, g, node, a.tile, a.slot)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceLimits {
    /// Upper bound on `(num_tiles * ii) ^ |N|`.
    pub max_states: f64,
}

impl Default for BruteForceLimits {
    fn default() -> Self {
        Self { max_states: 1e8 }
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub optimal_cycles: u64,
    pub mapping: Mapping,
    /// Partial assignments visited.
    pub explored: u64,
}

/// Smallest estimate of the search space: every node may take any active
/// tile-slice.
pub fn brute_force_estimate(g: &DataflowGraph, cfg: &DeviceConfig) -> f64 {
    ((cfg.num_tiles * cfg.ii) as f64).powi(g.len() as i32)
}

/// Depth-first enumeration of legal placements in topological order,
/// pruning any prefix whose makespan already reaches the best found.
pub fn brute_force_optimal(
    g: &DataflowGraph,
    cfg: &DeviceConfig,
    limits: BruteForceLimits,
) -> Result<BruteForceResult, BaselineError> {
    cfg.validate()?;
    let estimate = brute_force_estimate(g, cfg);
    if estimate > limits.max_states {
        return Err(BaselineError::TooLarge { estimate, limit: limits.max_states });
    }
    struct Search<'a> {
        g: &'a DataflowGraph,
        cfg: &'a DeviceConfig,
        best: Option<(u64, PlacementState)>,
        explored: u64,
    }
    impl Search<'_> {
        fn dfs(&mut self, state: PlacementState, depth: usize) -> Result<(), BaselineError> {
            self.explored += 1;
            let order = self.g.topological_order();
            if depth == order.len() {
                let c = state.makespan();
                if self.best.as_ref().is_none_or(|(b, _)| c < *b) {
                    self.best = Some((c, state));
                }
                return Ok(());
            }
            let node = order[depth];
            let mask = valid_action_mask(self.cfg, &state, self.g, node);
            for i in mask.valid_indices() {
                let a = self.cfg.action(i);
                let next = place_node(self.cfg, &state, self.g, node, a.tile, a.slot)?;
                if self.best.as_ref().is_some_and(|(b, _)| next.makespan() >= *b) {
                    continue;
                }
                self.dfs(next, depth + 1)?;
            }
            Ok(())
        }
    }
    let mut search = Search { g, cfg, best: None, explored: 0 };
    search.dfs(PlacementState::new(cfg, g.len()), 0)?;
    let (optimal_cycles, state) = search.best.ok_or(BaselineError::Infeasible(1))?;
    Ok(BruteForceResult { optimal_cycles, mapping: Mapping::from_state(cfg, &state, false), explored: search.explored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::validate_mapping;
    use crate::ir::{fixtures, IrGraph};

    fn dg(n: usize, edges: &[(usize, usize)]) -> DataflowGraph {
        DataflowGraph::new(IrGraph::from_edges("t", n, edges)).unwrap()
    }

    #[test]
    fn single_node_goes_to_origin() {
        let cfg = DeviceConfig::default();
        let m = greedy_schedule(&dg(1, &[]), &cfg).unwrap();
        let p = m.placements[&0];
        assert_eq!((p.tile, p.slot, p.fire_cycle), (0, 0, Some(0)));
        assert_eq!(m.total_cycles, Some(3));
    }

    #[test]
    fn greedy_two_chain() {
        // Producer at (0, 0) fires 0. Consumer on tile 0: arrival 2, slot 2
        // fires at 2. Tile 1: arrival 3, slot 0 fires at 3. Best is (0, 2).
        let cfg = DeviceConfig::default();
        let m = greedy_schedule(&dg(2, &[(0, 1)]), &cfg).unwrap();
        let p = m.placements[&1];
        assert_eq!((p.tile, p.slot, p.fire_cycle), (0, 2, Some(2)));
        assert_eq!(m.total_cycles, Some(5));
    }

    #[test]
    fn greedy_distance_calc_is_valid() {
        let cfg = DeviceConfig::default();
        let g = DataflowGraph::new(fixtures::distance_calc()).unwrap();
        let m = greedy_schedule(&g, &cfg).unwrap();
        assert!(validate_mapping(&cfg, &g, &m).is_valid());
    }

    #[test]
    fn brute_force_two_chain_single_slot() {
        let cfg = DeviceConfig::new(2, 1, 1);
        let r = brute_force_optimal(&dg(2, &[(0, 1)]), &cfg, BruteForceLimits::default()).unwrap();
        assert_eq!(r.optimal_cycles, 6);
        let one = brute_force_optimal(&dg(1, &[]), &cfg, BruteForceLimits::default()).unwrap();
        assert_eq!(one.optimal_cycles, cfg.exec_latency);
    }

    #[test]
    fn brute_force_limit() {
        let cfg = DeviceConfig::default();
        let g = DataflowGraph::new(fixtures::fft_like()).unwrap();
        let err = brute_force_optimal(&g, &cfg, BruteForceLimits::default()).unwrap_err();
        assert!(matches!(err, BaselineError::TooLarge { .. }));
        assert!(err.to_string().contains("e"));
    }

    #[test]
    fn greedy_dead_end_names_node() {
        // Three start nodes, two tiles: the third start has nowhere to go.
        let cfg = DeviceConfig::new(2, 2, 2);
        let err = greedy_schedule(&dg(3, &[]), &cfg).unwrap_err();
        assert!(matches!(err, BaselineError::DeadEnd(2)), "{err}");
    }
}
