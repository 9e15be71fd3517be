use super::DataflowGraph;

/// Columns: in-degree, out-degree, topological depth, starts-SDF flag,
/// sibling count, memory-group code.
pub const NODE_FEATURES: usize = 6;

/// Static per-node features fed to the graph encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    rows: Vec<[f64; NODE_FEATURES]>,
}

impl NodeFeatureMatrix {
    pub fn rows(&self) -> &[[f64; NODE_FEATURES]] {
        &self.rows
    }

    pub fn row(&self, node: usize) -> &[f64; NODE_FEATURES] {
        &self.rows[node]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn node_features(g: &DataflowGraph) -> NodeFeatureMatrix {
    let rows = (0..g.len())
        .map(|n| {
            [
                g.preds(n).len() as f64,
                g.succs(n).len() as f64,
                g.depth(n) as f64,
                if g.is_sdf_start(n) { 1.0 } else { 0.0 },
                g.siblings(n).len() as f64,
                g.memory_group(n) as f64,
            ]
        })
        .collect();
    NodeFeatureMatrix { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{InstructionNode, IrGraph};

    #[test]
    fn isolated_node() {
        let g = DataflowGraph::new(IrGraph::from_edges("one", 1, &[])).unwrap();
        assert_eq!(node_features(&g).row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn chain_middle() {
        let g = DataflowGraph::new(IrGraph::from_edges("c", 3, &[(0, 1), (1, 2)])).unwrap();
        let r = node_features(&g).row(1).to_owned();
        assert_eq!(&r[..4], &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_variable_group() {
        let nodes = vec![
            InstructionNode::new(0, "ld"),
            InstructionNode::new(1, "add").with_vars(["acc"]),
            InstructionNode::new(2, "add").with_vars(["acc"]),
        ];
        let g = DataflowGraph::new(IrGraph::new("m", nodes, vec![(0, 1), (1, 2)])).unwrap();
        let f = node_features(&g);
        assert_eq!(f.row(0)[5], 0.0);
        assert!(f.row(1)[5] > 0.0);
        assert_eq!(f.row(1)[5], f.row(2)[5]);
    }
}
