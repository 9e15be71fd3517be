//! Seeded layered-DAG workload generator.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adjacency, InstructionNode, IrGraph, NodeId};

const OPCODES: &[&str] = &["add", "sub", "mul", "shl", "and", "or", "max", "ld"];

#[derive(Debug, Clone)]
pub struct GeneratorParams {
    /// Probability of each extra (beyond the first) operand edge.
    pub edge_probability: f64,
    pub max_in_degree: usize,
    /// Fraction of nodes that receive a shared tile-memory variable.
    pub memory_fraction: f64,
    pub max_retries: usize,
    /// Layer count; `None` means `round(sqrt(n))`.
    pub layers: Option<usize>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self { edge_probability: 0.5, max_in_degree: 2, memory_fraction: 0.2, max_retries: 32, layers: None }
    }
}

#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub graph: IrGraph,
    /// Colocation constraints that could not be injected without conflict.
    pub warnings: Vec<String>,
}

/// Builds a layered DAG: edges only run from earlier to later layers and
/// every node past the first layer consumes at least one node of the
/// preceding layer.
pub fn random_graph(num_nodes: usize, seed: u64, params: &GeneratorParams) -> RandomGraph {
    assert!(num_nodes >= 1, "random_graph needs at least one node");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer_count = params
        .layers
        .unwrap_or_else(|| (num_nodes as f64).sqrt().round() as usize)
        .clamp(1, num_nodes);

    let mut sizes = vec![1usize; layer_count];
    for _ in layer_count..num_nodes {
        sizes[rng.random_range(0..layer_count)] += 1;
    }
    let mut layers: Vec<Vec<NodeId>> = Vec::with_capacity(layer_count);
    let mut next = 0;
    for &s in &sizes {
        layers.push((next..next + s).collect());
        next += s;
    }

    let mut edges = Vec::new();
    for l in 1..layer_count {
        let earlier: Vec<NodeId> = (0..layers[l][0]).collect();
        for &v in &layers[l] {
            let first = *layers[l - 1].choose(&mut rng).expect("layers are non-empty");
            let mut preds = vec![first];
            while preds.len() < params.max_in_degree.max(1) && rng.random_bool(params.edge_probability) {
                let cand = *earlier.choose(&mut rng).expect("earlier layers are non-empty");
                if !preds.contains(&cand) {
                    preds.push(cand);
                } else if preds.len() >= earlier.len() {
                    break;
                }
            }
            preds.sort_unstable();
            edges.extend(preds.into_iter().map(|u| (u, v)));
        }
    }

    let nodes: Vec<InstructionNode> = (0..num_nodes)
        .map(|i| InstructionNode::new(i, *OPCODES.choose(&mut rng).expect("non-empty")))
        .collect();
    let mut graph = IrGraph::new(format!("random-{num_nodes}-{seed}"), nodes, edges);

    let adj = Adjacency::build(&graph);
    let pairs = ((params.memory_fraction * num_nodes as f64) / 2.0).round() as usize;
    let mut warnings = Vec::new();
    let mut used = vec![false; num_nodes];
    for k in 0..pairs {
        let mut placed = false;
        for _ in 0..params.max_retries {
            if num_nodes < 2 {
                break;
            }
            let a = rng.random_range(0..num_nodes);
            let b = rng.random_range(0..num_nodes);
            if a == b || used[a] || used[b] {
                continue;
            }
            let both_start = adj.preds[a].is_empty() && adj.preds[b].is_empty();
            if both_start || adj.siblings[a].binary_search(&b).is_ok() {
                continue;
            }
            let var = format!("m{k}");
            graph.nodes[a].tile_memory_vars.insert(var.clone());
            graph.nodes[b].tile_memory_vars.insert(var);
            used[a] = true;
            used[b] = true;
            placed = true;
            break;
        }
        if !placed {
            warnings.push(format!("skipped tile-memory pair m{k}: no conflict-free node pair found"));
        }
    }

    RandomGraph { graph, warnings }
}
