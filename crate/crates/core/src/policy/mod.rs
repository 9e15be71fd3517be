//! Actor-critic networks over a dataflow graph and the device occupancy.
//!
//! Both networks share a layout but no parameters:
//!
//! * graph path: two symmetric-normalized graph convolutions, one
//!   multi-head self-attention encoder layer, then a pooling step that
//!   concatenates the node mean with the current node's attention-weighted
//!   mean and projects to width `f`;
//! * state path: occupancy plus normalized current node through one dense
//!   layer, concatenated with the graph embedding (`|TS| + 1 + f` wide);
//! * three dense layers to the logits (actor) or the value (critic).

mod checkpoint;
mod dist;
mod sampler;

use std::ptr;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{ActionMask, DeviceConfig};
use crate::env::Observation;
use crate::ir::{node_features, DataflowGraph, NODE_FEATURES};
use crate::nn::{Linear, ParamSet, Tape, Var};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dist::MaskedCategorical;
pub use sampler::{ModelPolicy, SelectMode};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sample {index}: action {action} is masked out")]
    MaskedAction { index: usize, action: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gnn_hidden: usize,
    /// Graph-embedding width `f`.
    pub embed_width: usize,
    pub attention_heads: usize,
    pub mlp_hidden: usize,
    /// When false the graph path is bypassed and the embedding is zero.
    pub use_gga: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { gnn_hidden: 64, embed_width: 128, attention_heads: 4, mlp_hidden: 256, use_gga: true }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [self.gnn_hidden, self.embed_width, self.attention_heads, self.mlp_hidden];
        if sizes.contains(&0) {
            return Err(ModelError::Config("all widths and the head count must be positive".into()));
        }
        if self.gnn_hidden % self.attention_heads != 0 {
            return Err(ModelError::Config(format!(
                "gnn_hidden ({}) must be divisible by attention_heads ({})",
                self.gnn_hidden, self.attention_heads
            )));
        }
        Ok(())
    }
}

/// Static per-graph inputs: column-normalized node features and the
/// normalized adjacency `D^-1/2 (A + I) D^-1/2` of the undirected graph.
#[derive(Debug, Clone)]
pub struct GraphTensors<T> {
    pub features: Array2<T>,
    pub adjacency: Array2<T>,
}

impl<T: Scalar> GraphTensors<T> {
    pub fn new(g: &DataflowGraph) -> Self {
        let n = g.len();
        let raw = node_features(g);
        let mut features = Array2::<f64>::zeros((n, NODE_FEATURES));
        for (i, row) in raw.rows().iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                features[[i, j]] = x;
            }
        }
        for mut col in features.columns_mut() {
            let max = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if max > 0.0 {
                col.mapv_inplace(|x| x / max);
            }
        }
        let mut a = Array2::<f64>::eye(n);
        for &(u, v) in g.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Array1<f64> = a.sum_axis(Axis(1)).mapv(|x| 1.0 / x.sqrt());
        let adjacency = Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] * d[i] * d[j]);
        Self { features: features.mapv(T::of), adjacency: adjacency.mapv(T::of) }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

/// Dynamic input row: tile-slice occupancy followed by `(node + 1) / |N|`.
pub fn dynamic_features<T: Scalar>(obs: &Observation) -> Vec<T> {
    let mut v: Vec<T> = obs.ts_occupancy.iter().map(|&x| T::of(x)).collect();
    let cur = obs.current_node.map_or(0.0, |c| (c + 1) as f64 / obs.num_nodes.max(1) as f64);
    v.push(T::of(cur));
    v
}

/// One step to evaluate: the graph it belongs to and what the agent saw.
#[derive(Debug, Clone, Copy)]
pub struct StepRef<'a, T> {
    pub graph: &'a GraphTensors<T>,
    pub observation: &'a Observation,
}

#[derive(Debug, Clone)]
struct Gga {
    gcn: [Linear; 2],
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ffn: [Linear; 2],
    pool: Linear,
}

/// Layer handles for one of the two networks.
#[derive(Debug, Clone)]
pub struct Network {
    gga: Option<Gga>,
    heads: usize,
    embed_width: usize,
    dynamic: Linear,
    mlp: [Linear; 3],
}

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;

impl Network {
    fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        cfg: &ModelConfig,
        state_width: usize,
        out_width: usize,
        out_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = cfg.gnn_hidden;
        let gga = cfg.use_gga.then(|| Gga {
            gcn: [
                Linear::new(params, "gcn0", NODE_FEATURES, h, HIDDEN_GAIN, rng),
                Linear::new(params, "gcn1", h, h, HIDDEN_GAIN, rng),
            ],
            query: Linear::new(params, "attn.query", h, h, 1.0, rng),
            key: Linear::new(params, "attn.key", h, h, 1.0, rng),
            value: Linear::new(params, "attn.value", h, h, 1.0, rng),
            out: Linear::new(params, "attn.out", h, h, 1.0, rng),
            ffn: [
                Linear::new(params, "ffn0", h, h, HIDDEN_GAIN, rng),
                Linear::new(params, "ffn1", h, h, 1.0, rng),
            ],
            pool: Linear::new(params, "pool", 2 * h, cfg.embed_width, HIDDEN_GAIN, rng),
        });
        let dynamic = Linear::new(params, "dynamic", state_width, state_width, HIDDEN_GAIN, rng);
        let wide = state_width + cfg.embed_width;
        let mlp = [
            Linear::new(params, "mlp0", wide, cfg.mlp_hidden, HIDDEN_GAIN, rng),
            Linear::new(params, "mlp1", cfg.mlp_hidden, cfg.mlp_hidden, HIDDEN_GAIN, rng),
            Linear::new(params, "head", cfg.mlp_hidden, out_width, out_gain, rng),
        ];
        Self { gga, heads: cfg.attention_heads, embed_width: cfg.embed_width, dynamic, mlp }
    }

    /// Node embeddings after the encoder and the head-averaged attention.
    /// `None` in baseline mode.
    fn encode<T: Scalar>(&self, tape: &mut Tape<'_, T>, graph: &GraphTensors<T>) -> Option<(Var, Var)> {
        let gga = self.gga.as_ref()?;
        let adj = tape.constant(graph.adjacency.clone());
        let mut x = tape.constant(graph.features.clone());
        for layer in &gga.gcn {
            let agg = tape.matmul(adj, x);
            let lin = layer.apply(tape, agg);
            x = tape.relu(lin);
        }
        let h = tape.value(x).ncols();
        let dh = h / self.heads;
        let q = gga.query.apply(tape, x);
        let k = gga.key.apply(tape, x);
        let v = gga.value.apply(tape, x);
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut attn_sum: Option<Var> = None;
        for head in 0..self.heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let a = tape.softmax_rows(scores);
            outs.push(tape.matmul(a, vh));
            attn_sum = Some(match attn_sum {
                Some(s) => tape.add(s, a),
                None => a,
            });
        }
        let attn = tape.scale(attn_sum.expect("at least one head"), T::of(1.0 / self.heads as f64));
        let cat = tape.concat_cols(&outs);
        let o = gga.out.apply(tape, cat);
        let x1 = tape.add(x, o);
        let f0 = gga.ffn[0].apply(tape, x1);
        let f0 = tape.relu(f0);
        let f1 = gga.ffn[1].apply(tape, f0);
        let z = tape.add(x1, f1);
        Some((z, attn))
    }

    /// Graph embedding per current node, `B × f`.
    fn pool<T: Scalar>(&self, tape: &mut Tape<'_, T>, encoded: Option<(Var, Var)>, currents: &[usize]) -> Var {
        let Some((z, attn)) = encoded else {
            return tape.constant(Array2::zeros((currents.len(), self.embed_width)));
        };
        let gga = self.gga.as_ref().expect("encoded implies graph path");
        let mean = tape.mean_rows(z);
        let mean = tape.repeat_rows(mean, currents.len());
        let rows = tape.gather_rows(attn, currents);
        let focused = tape.matmul(rows, z);
        let cat = tape.concat_cols(&[mean, focused]);
        let e = gga.pool.apply(tape, cat);
        tape.relu(e)
    }

    fn head<T: Scalar>(&self, tape: &mut Tape<'_, T>, dynamic: Array2<T>, embedding: Var) -> Var {
        let d = tape.constant(dynamic);
        let d = self.dynamic.apply(tape, d);
        let d = tape.relu(d);
        let mut x = tape.concat_cols(&[d, embedding]);
        for (i, layer) in self.mlp.iter().enumerate() {
            x = layer.apply(tape, x);
            if i + 1 < self.mlp.len() {
                x = tape.relu(x);
            }
        }
        x
    }

    /// Outputs for a batch, one row per step, in input order.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, steps: &[StepRef<'_, T>]) -> Var {
        let mut embeddings = Vec::new();
        let mut start = 0;
        while start < steps.len() {
            let graph = steps[start].graph;
            let mut end = start + 1;
            while end < steps.len() && ptr::eq(steps[end].graph, graph) {
                end += 1;
            }
            let currents: Vec<usize> =
                steps[start..end].iter().map(|s| s.observation.current_node.unwrap_or(0)).collect();
            let encoded = self.encode(tape, graph);
            embeddings.push(self.pool(tape, encoded, &currents));
            start = end;
        }
        let embedding = if embeddings.len() == 1 { embeddings[0] } else { tape.concat_rows(&embeddings) };
        let width = steps[0].observation.ts_occupancy.len() + 1;
        let mut dynamic = Array2::zeros((steps.len(), width));
        for (mut row, s) in dynamic.rows_mut().into_iter().zip(steps) {
            row.assign(&Array1::from(dynamic_features::<T>(s.observation)));
        }
        self.head(tape, dynamic, embedding)
    }
}

/// Per-episode cache of one network's encoder output.
#[derive(Debug, Clone)]
pub(crate) struct Encoded<T> {
    z: Array2<T>,
    attn: Array2<T>,
}

impl Network {
    pub(crate) fn encode_values<T: Scalar>(&self, params: &ParamSet<T>, graph: &GraphTensors<T>) -> Option<Encoded<T>> {
        let mut tape = Tape::new(params);
        let (z, a) = self.encode(&mut tape, graph)?;
        Some(Encoded { z: tape.value(z).clone(), attn: tape.value(a).clone() })
    }

    /// Single-step output reusing a cached encoding.
    pub(crate) fn step_values<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        encoded: Option<&Encoded<T>>,
        obs: &Observation,
    ) -> Vec<T> {
        let mut tape = Tape::new(params);
        let enc = encoded.map(|e| (tape.constant(e.z.clone()), tape.constant(e.attn.clone())));
        let emb = self.pool(&mut tape, enc, &[obs.current_node.unwrap_or(0)]);
        let dynamic = Array1::from(dynamic_features::<T>(obs)).insert_axis(Axis(0));
        let out = self.head(&mut tape, dynamic, emb);
        tape.value(out).row(0).to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct ActorCriticOutput<T> {
    /// Masked entries are −∞.
    pub logits: Vec<T>,
    pub value: T,
    /// Head-averaged encoder attention; absent in baseline mode.
    pub attention_scores: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub log_probs: Vec<T>,
    pub entropies: Vec<T>,
    pub values: Vec<T>,
}

/// Independent actor (θ) and critic (φ).
#[derive(Debug, Clone)]
pub struct ActorCritic<T: Scalar> {
    config: ModelConfig,
    num_tiles: usize,
    num_slots: usize,
    actor_net: Network,
    critic_net: Network,
    pub actor: ParamSet<T>,
    pub critic: ParamSet<T>,
}

impl<T: Scalar> ActorCritic<T> {
    pub fn new(config: ModelConfig, device: &DeviceConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action_dim = device.action_dim();
        let state = action_dim + 1;
        let mut actor = ParamSet::new();
        let actor_net = Network::new(&mut actor, &config, state, action_dim, 0.01, &mut rng);
        let mut critic = ParamSet::new();
        let critic_net = Network::new(&mut critic, &config, state, 1, 1.0, &mut rng);
        Ok(Self {
            config,
            num_tiles: device.num_tiles,
            num_slots: device.num_slots,
            actor_net,
            critic_net,
            actor,
            critic,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn action_dim(&self) -> usize {
        self.num_tiles * self.num_slots
    }

    pub fn num_tiles(&self) -> usize {
        self.num_tiles
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn actor_network(&self) -> &Network {
        &self.actor_net
    }

    pub fn critic_network(&self) -> &Network {
        &self.critic_net
    }

    /// Actor graph embedding for `current` and the head-averaged attention.
    pub fn gga_forward(&self, graph: &GraphTensors<T>, current: usize) -> Result<(Vec<T>, Array2<T>), ModelError> {
        if graph.num_nodes() == 0 {
            return Err(ModelError::Config("graph has no nodes".into()));
        }
        if current >= graph.num_nodes() {
            return Err(ModelError::Config(format!("current node {current} out of range")));
        }
        let mut tape = Tape::new(&self.actor);
        let Some(enc) = self.actor_net.encode(&mut tape, graph) else {
            return Err(ModelError::Config("graph path is disabled in baseline mode".into()));
        };
        let attn = tape.value(enc.1).clone();
        let emb = self.actor_net.pool(&mut tape, Some(enc), &[current]);
        Ok((tape.value(emb).row(0).to_vec(), attn))
    }

    /// Masked logits, value, and attention for one observation.
    pub fn evaluate(&self, graph: &GraphTensors<T>, obs: &Observation, mask: &ActionMask) -> ActorCriticOutput<T> {
        let enc = self.actor_net.encode_values(&self.actor, graph);
        let raw = self.actor_net.step_values(&self.actor, enc.as_ref(), obs);
        let logits = raw.iter().enumerate().map(|(i, &z)| if mask.allows(i) { z } else { T::neg_infinity() }).collect();
        let cenc = self.critic_net.encode_values(&self.critic, graph);
        let value = self.critic_net.step_values(&self.critic, cenc.as_ref(), obs)[0];
        ActorCriticOutput { logits, value, attention_scores: enc.map(|e| e.attn) }
    }

    pub fn critic_forward(&self, graph: &GraphTensors<T>, obs: &Observation) -> T {
        let enc = self.critic_net.encode_values(&self.critic, graph);
        self.critic_net.step_values(&self.critic, enc.as_ref(), obs)[0]
    }

    /// Raw actor logits, `B × action_dim`, on a tape over `self.actor`.
    pub fn actor_logits(&self, tape: &mut Tape<'_, T>, steps: &[StepRef<'_, T>]) -> Var {
        self.actor_net.forward(tape, steps)
    }

    /// Critic values, `B × 1`, on a tape over `self.critic`.
    pub fn critic_values(&self, tape: &mut Tape<'_, T>, steps: &[StepRef<'_, T>]) -> Var {
        self.critic_net.forward(tape, steps)
    }

    /// Log-probabilities, valid-support entropies, and values for stored
    /// `(step, mask, action)` triples.
    pub fn evaluate_actions(
        &self,
        steps: &[StepRef<'_, T>],
        masks: &[&ActionMask],
        actions: &[usize],
    ) -> Result<Evaluation<T>, ModelError> {
        let logits = {
            let mut tape = Tape::new(&self.actor);
            let v = self.actor_logits(&mut tape, steps);
            tape.value(v).clone()
        };
        let values = {
            let mut tape = Tape::new(&self.critic);
            let v = self.critic_values(&mut tape, steps);
            tape.value(v).column(0).to_vec()
        };
        let mut log_probs = Vec::with_capacity(steps.len());
        let mut entropies = Vec::with_capacity(steps.len());
        for (i, (row, (&mask, &a))) in logits.rows().into_iter().zip(masks.iter().zip(actions)).enumerate() {
            if a >= mask.len() || !mask.allows(a) {
                return Err(ModelError::MaskedAction { index: i, action: a });
            }
            let d = MaskedCategorical::new(row.as_slice().expect("standard layout"), mask)
                .ok_or(ModelError::MaskedAction { index: i, action: a })?;
            log_probs.push(d.log_prob(a));
            entropies.push(d.entropy());
        }
        Ok(Evaluation { log_probs, entropies, values })
    }
}

#[cfg(test)]
mod tests;
