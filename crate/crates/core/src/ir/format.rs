//! JSON document form of an [`IrGraph`].
//!
//! ```json
//! { "name": "dist", "nodes": [ { "id": 0, "opcode": "sub", "tile_memory_vars": ["x0"] } ], "edges": [[0, 3]] }
//! ```
//!
//! SDF ids are derived from connectivity and never stored. Output is
//! canonical: object keys sorted, edges sorted, variables sorted.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{validate_graph, InstructionNode, IrError, IrGraph, Violation};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    name: String,
    nodes: Vec<NodeDoc>,
    edges: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: usize,
    opcode: String,
    #[serde(default)]
    tile_memory_vars: Vec<String>,
}

pub fn parse_ir(text: &str) -> Result<IrGraph, IrError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: GraphDoc = serde_path_to_error::deserialize(de).map_err(|e| IrError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let n = doc.nodes.len();
    let mut slots: Vec<Option<InstructionNode>> = vec![None; n];
    for (i, nd) in doc.nodes.into_iter().enumerate() {
        let path = format!("nodes[{i}].id");
        if nd.id >= n {
            return Err(IrError::Parse { path, message: format!("id {} outside 0..{n}", nd.id) });
        }
        if slots[nd.id].is_some() {
            return Err(IrError::Parse { path, message: format!("duplicate id {}", nd.id) });
        }
        slots[nd.id] = Some(InstructionNode::new(nd.id, nd.opcode).with_vars(nd.tile_memory_vars));
    }
    let nodes = slots.into_iter().flatten().collect();
    let edges = doc.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = IrGraph::new(doc.name, nodes, edges);

    if let Some(v) = validate_graph(&graph).into_iter().next() {
        let path = match &v {
            Violation::EmptyGraph => "nodes".to_string(),
            Violation::IdMismatch { index, .. } => format!("nodes[{index}].id"),
            Violation::SelfEdge { index, .. }
            | Violation::DanglingEdge { index, .. }
            | Violation::DuplicateEdge { index, .. } => format!("edges[{index}]"),
            Violation::Cycle(_) => "edges".to_string(),
            Violation::ColocationConflict { b, .. } => format!("nodes[{b}].tile_memory_vars"),
        };
        return Err(IrError::Parse { path, message: v.to_string() });
    }
    Ok(graph)
}

pub fn serialize_ir(g: &IrGraph) -> String {
    let mut edges = g.edges.clone();
    edges.sort_unstable();
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|n| json!({ "id": n.id, "opcode": n.opcode, "tile_memory_vars": n.tile_memory_vars }))
        .collect();
    let doc = json!({
        "name": g.name,
        "nodes": nodes,
        "edges": edges.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values always serialize");
    text.push('\n');
    text
}
