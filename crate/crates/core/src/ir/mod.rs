//! Program representation: instruction nodes grouped into synchronous
//! dataflow (SDF) components.
//!
//! [`IrGraph`] is the raw, serializable document. It may be malformed;
//! [`validate_graph`] lists what is wrong with it. [`DataflowGraph`] is the
//! validated form with adjacency, sibling and colocation tables precomputed,
//! and is what the device model, environment and policies consume.

mod features;
pub mod fixtures;
mod format;
mod generate;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

pub use features::{node_features, NodeFeatureMatrix, NODE_FEATURES};
pub use format::{parse_ir, serialize_ir};
pub use generate::{random_graph, GeneratorParams, RandomGraph};

pub type NodeId = usize;

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("cycle detected through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("invalid graph: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("at {path}: {message}")]
    Parse { path: String, message: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One instruction. `opcode` is informational only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionNode {
    pub id: NodeId,
    pub opcode: String,
    pub tile_memory_vars: BTreeSet<String>,
}

impl InstructionNode {
    pub fn new(id: NodeId, opcode: impl Into<String>) -> Self {
        Self { id, opcode: opcode.into(), tile_memory_vars: BTreeSet::new() }
    }

    pub fn with_vars<I, S>(mut self, vars: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tile_memory_vars.extend(vars.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrGraph {
    pub name: String,
    pub nodes: Vec<InstructionNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl IrGraph {
    pub fn new(name: impl Into<String>, nodes: Vec<InstructionNode>, edges: Vec<(NodeId, NodeId)>) -> Self {
        Self { name: name.into(), nodes, edges }
    }

    /// Nodes `0..n` with generic opcodes and the given edges.
    pub fn from_edges(name: impl Into<String>, n: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let nodes = (0..n).map(|i| InstructionNode::new(i, "op")).collect();
        Self::new(name, nodes, edges.to_vec())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weakly-connected-component label per node, numbered in order of the
    /// smallest node id in each component. Edges with out-of-range endpoints
    /// are ignored.
    pub fn sdf_ids(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &self.edges {
            if u < n && v < n {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for root in 0..n {
            if label[root] != usize::MAX {
                continue;
            }
            label[root] = next;
            let mut stack = vec![root];
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictKind {
    Siblings,
    SdfStarts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyGraph,
    IdMismatch { index: usize, id: NodeId },
    SelfEdge { index: usize, node: NodeId },
    DanglingEdge { index: usize, src: NodeId, dst: NodeId },
    DuplicateEdge { index: usize, src: NodeId, dst: NodeId },
    Cycle(Vec<NodeId>),
    /// Two nodes in the same tile-memory group must share a tile, but the
    /// sibling / SDF-start rules forbid it.
    ColocationConflict { a: NodeId, b: NodeId, kind: ConflictKind },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "graph has no nodes"),
            Violation::IdMismatch { index, id } => {
                write!(f, "nodes[{index}] has id {id}; ids must be 0..n-1 in order")
            }
            Violation::SelfEdge { index, node } => write!(f, "edges[{index}]: self-edge on node {node}"),
            Violation::DanglingEdge { index, src, dst } => {
                write!(f, "edges[{index}]: ({src}, {dst}) references a nonexistent node")
            }
            Violation::DuplicateEdge { index, src, dst } => {
                write!(f, "edges[{index}]: duplicate edge ({src}, {dst})")
            }
            Violation::Cycle(c) => write!(f, "cycle through nodes {c:?}"),
            Violation::ColocationConflict { a, b, kind } => {
                let why = match kind {
                    ConflictKind::Siblings => "are siblings",
                    ConflictKind::SdfStarts => "both start an SDF",
                };
                write!(f, "colocation conflict: nodes {a} and {b} share tile memory but {why}")
            }
        }
    }
}

/// Lists every structural problem with `g`. An empty list means the graph
/// can be turned into a [`DataflowGraph`].
pub fn validate_graph(g: &IrGraph) -> Vec<Violation> {
    let n = g.nodes.len();
    let mut out = Vec::new();
    if n == 0 {
        out.push(Violation::EmptyGraph);
        return out;
    }
    for (index, node) in g.nodes.iter().enumerate() {
        if node.id != index {
            out.push(Violation::IdMismatch { index, id: node.id });
        }
    }
    let mut seen = BTreeSet::new();
    let mut structural_ok = true;
    for (index, &(src, dst)) in g.edges.iter().enumerate() {
        if src >= n || dst >= n {
            out.push(Violation::DanglingEdge { index, src, dst });
            structural_ok = false;
        } else if src == dst {
            out.push(Violation::SelfEdge { index, node: src });
            structural_ok = false;
        } else if !seen.insert((src, dst)) {
            out.push(Violation::DuplicateEdge { index, src, dst });
        }
    }
    if !structural_ok {
        return out;
    }
    if let Err(IrError::Cycle(c)) = topological_order(g) {
        out.push(Violation::Cycle(c));
        return out;
    }

    let tables = Adjacency::build(g);
    let groups = memory_groups(g);
    let mut members: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (node, &code) in groups.iter().enumerate() {
        if code != 0 {
            members.entry(code).or_default().push(node);
        }
    }
    for group in members.values() {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                if tables.preds[a].is_empty() && tables.preds[b].is_empty() {
                    out.push(Violation::ColocationConflict { a, b, kind: ConflictKind::SdfStarts });
                } else if tables.siblings[a].binary_search(&b).is_ok() {
                    out.push(Violation::ColocationConflict { a, b, kind: ConflictKind::Siblings });
                }
            }
        }
    }
    out
}

/// Kahn's algorithm with ascending-id tie-break.
pub fn topological_order(g: &IrGraph) -> Result<Vec<NodeId>, IrError> {
    let n = g.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut succs = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        if u >= n || v >= n {
            return Err(IrError::Invalid(vec![Violation::DanglingEdge { index: 0, src: u, dst: v }]));
        }
        succs[u].push(v);
        indeg[v] += 1;
    }
    let mut heap: BinaryHeap<Reverse<NodeId>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = heap.pop() {
        order.push(u);
        for &v in &succs[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                heap.push(Reverse(v));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let remaining: Vec<bool> = (0..n).map(|i| indeg[i] > 0).collect();
        Err(IrError::Cycle(find_cycle(&succs, &remaining)))
    }
}

/// Every node left over after Kahn's pass has a leftover predecessor, so
/// walking predecessors from any of them must revisit a node.
fn find_cycle(succs: &[Vec<NodeId>], remaining: &[bool]) -> Vec<NodeId> {
    let n = succs.len();
    let mut preds = vec![Vec::new(); n];
    for (u, vs) in succs.iter().enumerate() {
        for &v in vs {
            if remaining[u] && remaining[v] {
                preds[v].push(u);
            }
        }
    }
    let Some(start) = (0..n).find(|&i| remaining[i]) else {
        return Vec::new();
    };
    let mut pos = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while pos[cur] == usize::MAX {
        pos[cur] = path.len();
        path.push(cur);
        cur = preds[cur][0];
    }
    let mut cycle = path[pos[cur]..].to_vec();
    cycle.reverse();
    cycle
}

/// Memory-group code per node: 0 for nodes without tile-memory variables,
/// otherwise `1 + k` where `k` numbers the groups of the shares-a-variable
/// relation (transitively closed) by smallest member id.
pub(crate) fn memory_groups(g: &IrGraph) -> Vec<usize> {
    let n = g.nodes.len();
    let mut by_var: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for (index, node) in g.nodes.iter().enumerate() {
        for var in &node.tile_memory_vars {
            by_var.entry(var.as_str()).or_default().push(index);
        }
    }
    let mut code = vec![0usize; n];
    let mut next = 1;
    for root in 0..n {
        if code[root] != 0 || g.nodes[root].tile_memory_vars.is_empty() {
            continue;
        }
        code[root] = next;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for var in &g.nodes[u].tile_memory_vars {
                for &v in &by_var[var.as_str()] {
                    if code[v] == 0 {
                        code[v] = next;
                        stack.push(v);
                    }
                }
            }
        }
        next += 1;
    }
    code
}

struct Adjacency {
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
    siblings: Vec<Vec<NodeId>>,
}

impl Adjacency {
    fn build(g: &IrGraph) -> Self {
        let n = g.nodes.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(u, v) in &g.edges {
            preds[v].push(u);
            succs[u].push(v);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let mut siblings = vec![BTreeSet::new(); n];
        for children in &succs {
            for &a in children {
                for &b in children {
                    if a != b {
                        siblings[a].insert(b);
                    }
                }
            }
        }
        let siblings = siblings.into_iter().map(|s| s.into_iter().collect()).collect();
        Self { preds, succs, siblings }
    }
}

/// A validated program with the lookup tables placement needs.
#[derive(Debug, Clone)]
pub struct DataflowGraph {
    ir: IrGraph,
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
    siblings: Vec<Vec<NodeId>>,
    mem_partners: Vec<Vec<NodeId>>,
    memory_group: Vec<usize>,
    sdf_id: Vec<usize>,
    order: Vec<NodeId>,
    depth: Vec<usize>,
}

impl DataflowGraph {
    pub fn new(ir: IrGraph) -> Result<Self, IrError> {
        let violations = validate_graph(&ir);
        if !violations.is_empty() {
            return Err(IrError::Invalid(violations));
        }
        let Adjacency { preds, succs, siblings } = Adjacency::build(&ir);
        let order = topological_order(&ir)?;
        let n = ir.nodes.len();

        let mut mem_partners = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..n {
                if a != b && !ir.nodes[a].tile_memory_vars.is_disjoint(&ir.nodes[b].tile_memory_vars) {
                    mem_partners[a].push(b);
                }
            }
        }

        let mut depth = vec![0usize; n];
        for &u in &order {
            for &v in &succs[u] {
                depth[v] = depth[v].max(depth[u] + 1);
            }
        }

        Ok(Self {
            memory_group: memory_groups(&ir),
            sdf_id: ir.sdf_ids(),
            ir,
            preds,
            succs,
            siblings,
            mem_partners,
            order,
            depth,
        })
    }

    pub fn ir(&self) -> &IrGraph {
        &self.ir
    }

    pub fn name(&self) -> &str {
        &self.ir.name
    }

    pub fn len(&self) -> usize {
        self.ir.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ir.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.ir.edges
    }

    pub fn preds(&self, n: NodeId) -> &[NodeId] {
        &self.preds[n]
    }

    pub fn succs(&self, n: NodeId) -> &[NodeId] {
        &self.succs[n]
    }

    /// Nodes sharing at least one direct predecessor with `n`.
    pub fn siblings(&self, n: NodeId) -> &[NodeId] {
        &self.siblings[n]
    }

    /// Nodes sharing at least one tile-memory variable with `n`.
    pub fn memory_partners(&self, n: NodeId) -> &[NodeId] {
        &self.mem_partners[n]
    }

    pub fn memory_group(&self, n: NodeId) -> usize {
        self.memory_group[n]
    }

    /// In-degree zero: the node starts its SDF.
    pub fn is_sdf_start(&self, n: NodeId) -> bool {
        self.preds[n].is_empty()
    }

    pub fn sdf_id(&self, n: NodeId) -> usize {
        self.sdf_id[n]
    }

    pub fn num_sdfs(&self) -> usize {
        self.sdf_id.iter().max().map_or(0, |m| m + 1)
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.order
    }

    /// Longest path length from any source.
    pub fn depth(&self, n: NodeId) -> usize {
        self.depth[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_edge_is_reported() {
        let g = IrGraph::from_edges("t", 2, &[(0, 0)]);
        let v = validate_graph(&g);
        assert_eq!(v, vec![Violation::SelfEdge { index: 0, node: 0 }]);
        assert!(v[0].to_string().contains("self-edge"));
    }

    #[test]
    fn sibling_colocation_is_a_conflict() {
        let mut g = IrGraph::from_edges("t", 3, &[(0, 1), (0, 2)]);
        g.nodes[1].tile_memory_vars.insert("x0".into());
        g.nodes[2].tile_memory_vars.insert("x0".into());
        let v = validate_graph(&g);
        assert_eq!(v, vec![Violation::ColocationConflict { a: 1, b: 2, kind: ConflictKind::Siblings }]);
        assert!(v[0].to_string().contains("colocation conflict"));
    }

    #[test]
    fn start_colocation_is_a_conflict() {
        let mut g = IrGraph::from_edges("t", 2, &[]);
        g.nodes[0].tile_memory_vars.insert("v".into());
        g.nodes[1].tile_memory_vars.insert("v".into());
        assert!(matches!(
            validate_graph(&g)[..],
            [Violation::ColocationConflict { kind: ConflictKind::SdfStarts, .. }]
        ));
    }

    #[test]
    fn transitive_group_conflict() {
        // 1 and 2 are siblings; they are linked only through node 3's variables.
        let mut g = IrGraph::from_edges("t", 4, &[(0, 1), (0, 2), (1, 3)]);
        g.nodes[1].tile_memory_vars.insert("a".into());
        g.nodes[3].tile_memory_vars.extend(["a".to_string(), "b".to_string()]);
        g.nodes[2].tile_memory_vars.insert("b".into());
        let v = validate_graph(&g);
        assert!(v.contains(&Violation::ColocationConflict { a: 1, b: 2, kind: ConflictKind::Siblings }));
    }

    #[test]
    fn dangling_duplicate_and_ids() {
        let g = IrGraph::from_edges("t", 2, &[(0, 1), (0, 1), (1, 9)]);
        let v = validate_graph(&g);
        assert!(v.contains(&Violation::DanglingEdge { index: 2, src: 1, dst: 9 }));
        let mut g = IrGraph::from_edges("t", 2, &[(0, 1), (0, 1)]);
        assert_eq!(validate_graph(&g), vec![Violation::DuplicateEdge { index: 1, src: 0, dst: 1 }]);
        g.nodes[1].id = 5;
        assert!(validate_graph(&g).contains(&Violation::IdMismatch { index: 1, id: 5 }));
        assert_eq!(validate_graph(&IrGraph::from_edges("e", 0, &[])), vec![Violation::EmptyGraph]);
    }

    #[test]
    fn topological_examples() {
        let chain = IrGraph::from_edges("c", 3, &[(0, 1), (1, 2)]);
        assert_eq!(topological_order(&chain).unwrap(), vec![0, 1, 2]);
        let diamond = IrGraph::from_edges("d", 4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(topological_order(&diamond).unwrap(), vec![0, 1, 2, 3]);
        let rev = IrGraph::from_edges("r", 3, &[(2, 1), (1, 0)]);
        assert_eq!(topological_order(&rev).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn cycle_is_named() {
        let g = IrGraph::from_edges("c", 4, &[(0, 1), (1, 2), (2, 3), (3, 1)]);
        match topological_order(&g) {
            Err(IrError::Cycle(c)) => {
                let mut c = c;
                c.sort();
                assert_eq!(c, vec![1, 2, 3]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
        assert!(matches!(validate_graph(&g)[..], [Violation::Cycle(_)]));
    }

    #[test]
    fn dataflow_tables() {
        let g = DataflowGraph::new(IrGraph::from_edges("d", 5, &[(0, 1), (0, 2), (1, 3), (2, 3)])).unwrap();
        assert_eq!(g.siblings(1), &[2]);
        assert_eq!(g.siblings(3), &[] as &[usize]);
        assert!(g.is_sdf_start(0) && g.is_sdf_start(4));
        assert_eq!(g.depth(3), 2);
        assert_eq!(g.num_sdfs(), 2);
        assert_eq!(g.sdf_id(4), 1);
    }
}
