//! Placement episodes: one node per step, in topological order by default.
//!
//! Each placement earns `-(t_n - t_p)` where `t_n` is the node's ready time
//! and `t_p` the latest ready time among its predecessors (0 for sources),
//! so along any chain the rewards telescope to minus the final ready time.
//! A node with no legal tile-slice ends the episode with `-lambda`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::state::{place_with_mode, TimingMode};
use crate::device::{
    retime, valid_action_mask, Action, ActionMask, DeviceConfig, DeviceError, Mapping, PlacementState,
};
use crate::ir::{DataflowGraph, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("episode already finished")]
    Done,
    #[error("action (tile {}, slot {}) is masked out for node {node}", .action.tile, .action.slot)]
    MaskedAction { node: NodeId, action: Action },
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("dead end declared for node {0} but legal placements exist")]
    SpuriousDeadEnd(NodeId),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeOrder {
    #[default]
    Topological,
    /// Fresh random permutation every episode.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvOptions {
    pub order: NodeOrder,
    /// With masking off the agent may pick any tile-slice; an illegal pick
    /// is penalized like a dead end.
    pub masking: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self { order: NodeOrder::Topological, masking: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Per tile-slice: `(node + 1) / |N|` when occupied, else 0.
    pub ts_occupancy: Vec<f64>,
    /// Node to place next; `None` once the episode is over.
    pub current_node: Option<NodeId>,
    pub num_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Place(Action),
    DeadEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub fire_cycle: Option<u64>,
    pub ready_time: Option<u64>,
    pub dead_end: bool,
    /// Unmasked mode only: the chosen tile-slice broke a constraint.
    pub invalid_action: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct MappingEnv {
    graph: Arc<DataflowGraph>,
    cfg: DeviceConfig,
    options: EnvOptions,
    order: Vec<NodeId>,
    cursor: usize,
    state: PlacementState,
    dead_end: bool,
    episode_return: f64,
    rng: ChaCha8Rng,
    /// Placements fixed before the episode starts, in topological order.
    pins: Vec<(NodeId, Action)>,
}

impl MappingEnv {
    pub fn new(graph: Arc<DataflowGraph>, cfg: DeviceConfig, options: EnvOptions) -> Result<Self, DeviceError> {
        cfg.validate()?;
        let state = PlacementState::new(&cfg, graph.len());
        let order = graph.topological_order().to_vec();
        Ok(Self {
            graph,
            cfg,
            options,
            order,
            cursor: 0,
            state,
            dead_end: false,
            episode_return: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
            pins: Vec::new(),
        })
    }

    /// Fixes some placements ahead of every later episode; the agent maps
    /// only the remaining nodes. Fails if the pins conflict with each
    /// other or the device.
    pub fn pin(&mut self, pins: impl IntoIterator<Item = (NodeId, Action)>) -> Result<(), EnvError> {
        let wanted: std::collections::BTreeMap<NodeId, Action> = pins.into_iter().collect();
        if let Some(&node) = wanted.keys().find(|&&n| n >= self.graph.len()) {
            return Err(EnvError::UnknownNode(node));
        }
        let ordered: Vec<(NodeId, Action)> =
            self.graph.topological_order().iter().filter_map(|n| wanted.get(n).map(|&a| (*n, a))).collect();
        self.pinned_state(&ordered)?;
        self.pins = ordered;
        Ok(())
    }

    pub fn pins(&self) -> &[(NodeId, Action)] {
        &self.pins
    }

    fn pinned_state(&self, pins: &[(NodeId, Action)]) -> Result<PlacementState, DeviceError> {
        let mut state = PlacementState::new(&self.cfg, self.graph.len());
        for &(node, a) in pins {
            state = place_with_mode(&self.cfg, &state, &self.graph, node, a.tile, a.slot, TimingMode::PlacedOnly)?;
        }
        Ok(retime(&self.cfg, &self.graph, &state))
    }

    pub fn graph(&self) -> &Arc<DataflowGraph> {
        &self.graph
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn options(&self) -> EnvOptions {
        self.options
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.order = self.graph.topological_order().to_vec();
        if self.options.order == NodeOrder::Random {
            self.order.shuffle(&mut self.rng);
        }
        self.cursor = 0;
        self.state = self.pinned_state(&self.pins).expect("pins were checked when set");
        let state = &self.state;
        self.order.retain(|&n| !state.is_placed(n));
        self.dead_end = false;
        self.episode_return = 0.0;
        self.observation()
    }

    pub fn current_node(&self) -> Option<NodeId> {
        if self.is_done() {
            None
        } else {
            self.order.get(self.cursor).copied()
        }
    }

    pub fn is_done(&self) -> bool {
        self.dead_end || self.cursor >= self.order.len()
    }

    pub fn hit_dead_end(&self) -> bool {
        self.dead_end
    }

    pub fn state(&self) -> &PlacementState {
        &self.state
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn observation(&self) -> Observation {
        let n = self.graph.len() as f64;
        let ts_occupancy = self
            .state
            .occupancy()
            .iter()
            .map(|o| o.map_or(0.0, |node| (node + 1) as f64 / n))
            .collect();
        Observation { ts_occupancy, current_node: self.current_node(), num_nodes: self.graph.len() }
    }

    /// Legal tile-slices for the current node.
    pub fn valid_mask(&self) -> ActionMask {
        match self.current_node() {
            Some(node) => valid_action_mask(&self.cfg, &self.state, &self.graph, node),
            None => ActionMask::from_bits(vec![false; self.cfg.action_dim()], self.cfg.num_slots),
        }
    }

    /// The mask the agent acts under: the legal set when masking, all ones
    /// otherwise.
    pub fn policy_mask(&self) -> ActionMask {
        if self.options.masking {
            self.valid_mask()
        } else {
            ActionMask::full(&self.cfg)
        }
    }

    fn timing_mode(&self) -> TimingMode {
        match self.options.order {
            NodeOrder::Topological => TimingMode::Strict,
            NodeOrder::Random => TimingMode::PlacedOnly,
        }
    }

    pub fn step(&mut self, decision: Decision) -> Result<StepResult, EnvError> {
        let node = self.current_node().ok_or(EnvError::Done)?;
        let mask = self.valid_mask();
        if mask.is_dead_end() {
            return Ok(self.terminate(StepInfo { dead_end: true, ..Default::default() }));
        }
        let action = match decision {
            Decision::Place(a) => a,
            Decision::DeadEnd if self.options.masking => return Err(EnvError::SpuriousDeadEnd(node)),
            Decision::DeadEnd => {
                return Ok(self.terminate(StepInfo { dead_end: true, invalid_action: true, ..Default::default() }))
            }
        };
        if !mask.get(action.tile, action.slot) {
            if self.options.masking {
                return Err(EnvError::MaskedAction { node, action });
            }
            return Ok(self.terminate(StepInfo { dead_end: true, invalid_action: true, ..Default::default() }));
        }

        let next = place_with_mode(&self.cfg, &self.state, &self.graph, node, action.tile, action.slot, self.timing_mode())?;
        let placed = *next.placement(node).expect("just placed");
        let mut reward = -(placed.ready_time as f64 - latest_pred_ready(&self.graph, &next, node) as f64);
        self.state = next;
        self.cursor += 1;

        if self.cursor == self.order.len() && (self.options.order == NodeOrder::Random || !self.pins.is_empty()) {
            // Out-of-order or pinned placement saw only partial operand
            // timing; settle the schedule and fold the difference into the
            // last reward.
            self.state = retime(&self.cfg, &self.graph, &self.state);
            let settled = schedule_return(&self.graph, &self.state);
            reward = settled - self.episode_return;
        }
        self.episode_return += reward;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.is_done(),
            info: StepInfo {
                fire_cycle: Some(placed.fire_cycle),
                ready_time: Some(placed.ready_time),
                ..Default::default()
            },
        })
    }

    fn terminate(&mut self, info: StepInfo) -> StepResult {
        self.dead_end = true;
        let reward = -self.cfg.lambda_penalty;
        self.episode_return += reward;
        StepResult { observation: self.observation(), reward, done: true, info }
    }

    /// Mapping of everything placed so far.
    pub fn mapping(&self) -> Mapping {
        Mapping::from_state(&self.cfg, &self.state, self.dead_end)
    }
}

fn latest_pred_ready(g: &DataflowGraph, state: &PlacementState, node: NodeId) -> u64 {
    g.preds(node).iter().filter_map(|&p| state.placement(p)).map(|p| p.ready_time).max().unwrap_or(0)
}

/// Sum of per-node rewards implied by a (partial) schedule.
pub fn schedule_return(g: &DataflowGraph, state: &PlacementState) -> f64 {
    state
        .placed()
        .map(|(n, p)| -(p.ready_time as f64 - latest_pred_ready(g, state, n) as f64))
        .sum()
}

/// What a policy produced for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStep {
    pub decision: Decision,
    pub log_prob: f64,
    pub value: f64,
}

pub trait Policy {
    fn act(&mut self, env: &MappingEnv, obs: &Observation, mask: &ActionMask, rng: &mut ChaCha8Rng) -> PolicyStep;

    /// Called once before each episode.
    fn begin_episode(&mut self, _env: &MappingEnv) {}
}

/// Uniform over the mask support.
#[derive(Debug, Default, Clone, Copy)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, env: &MappingEnv, _obs: &Observation, mask: &ActionMask, rng: &mut ChaCha8Rng) -> PolicyStep {
        let valid: Vec<usize> = mask.valid_indices().collect();
        if valid.is_empty() {
            return PolicyStep { decision: Decision::DeadEnd, log_prob: 0.0, value: 0.0 };
        }
        let pick = valid[rng.random_range(0..valid.len())];
        PolicyStep {
            decision: Decision::Place(env.config().action(pick)),
            log_prob: -(valid.len() as f64).ln(),
            value: 0.0,
        }
    }
}

/// One stored step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub mask: ActionMask,
    /// Action index; `None` for a dead-end step where nothing was sampled.
    pub action: Option<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub mapping: Mapping,
    pub episode_return: f64,
    pub trajectory: Vec<Transition>,
    pub dead_end: bool,
    /// Present when every node was placed.
    pub total_cycles: Option<u64>,
}

/// Runs one episode to completion. The environment is reset with `seed`;
/// sampling draws from `rng`.
pub fn run_episode<P: Policy + ?Sized>(policy: &mut P, env: &mut MappingEnv, seed: u64, rng: &mut ChaCha8Rng) -> Result<Episode, EnvError> {
    let mut obs = env.reset(seed);
    policy.begin_episode(env);
    let mut trajectory = Vec::with_capacity(env.graph().len());
    while !env.is_done() {
        let mask = env.policy_mask();
        let step = policy.act(env, &obs, &mask, rng);
        let action = match step.decision {
            Decision::Place(a) => Some(env.config().action_index(a)),
            Decision::DeadEnd => None,
        };
        let result = env.step(step.decision)?;
        trajectory.push(Transition {
            observation: obs,
            mask,
            action,
            log_prob: step.log_prob,
            reward: result.reward,
            value: step.value,
            done: result.done,
        });
        obs = result.observation;
    }
    let dead_end = env.hit_dead_end();
    Ok(Episode {
        mapping: env.mapping(),
        episode_return: env.episode_return(),
        trajectory,
        dead_end,
        total_cycles: (!dead_end).then(|| env.state().makespan()),
    })
}
