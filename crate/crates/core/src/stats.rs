//! Size statistics for built graphs.

use serde::Serialize;

use crate::annotation::DocumentSet;
use crate::build::build_graph;
use crate::graph::{EdgeKind, SemanticGraph};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub input_token_count: usize,
    /// Weakly connected components over ORIGINAL edges, isolated nodes
    /// included.
    pub component_count: usize,
}

impl GraphStats {
    pub fn edge_node_ratio(&self) -> f64 {
        if self.node_count == 0 {
            0.0
        } else {
            self.edge_count as f64 / self.node_count as f64
        }
    }
}

/// Weakly connected components over edges of the given kinds; isolated
/// nodes count as components.
pub fn weak_component_count(g: &SemanticGraph, kinds: &[EdgeKind]) -> usize {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for e in g.edges().iter().filter(|e| kinds.contains(&e.kind)) {
        let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components
}

pub fn graph_stats(g: &SemanticGraph, input_len: usize) -> GraphStats {
    GraphStats {
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        input_token_count: input_len,
        component_count: weak_component_count(g, &[EdgeKind::Original]),
    }
}

/// Average graph size over documents grouped by input length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthBucket {
    /// Inclusive lower bound on token count.
    pub lower: usize,
    pub documents: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
}

/// Builds one graph per document and averages node and edge counts within
/// token-length buckets of width `bucket_size`.
pub fn length_buckets(ds: &DocumentSet, bucket_size: usize) -> Result<Vec<LengthBucket>> {
    let bucket_size = bucket_size.max(1);
    let mut acc: std::collections::BTreeMap<usize, (usize, usize, usize)> = Default::default();
    for (i, doc) in ds.documents().iter().enumerate() {
        let single = ds.document_set(i)?;
        let g = build_graph(&single);
        let lower = doc.tokens.len() / bucket_size * bucket_size;
        let e = acc.entry(lower).or_default();
        e.0 += 1;
        e.1 += g.node_count();
        e.2 += g.edge_count();
    }
    Ok(acc
        .into_iter()
        .map(|(lower, (docs, nodes, edges))| LengthBucket {
            lower,
            documents: docs,
            avg_nodes: nodes as f64 / docs as f64,
            avg_edges: edges as f64 / docs as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeType;

    #[test]
    fn empty_graph() {
        let s = graph_stats(&SemanticGraph::default(), 12);
        assert_eq!(
            s,
            GraphStats {
                node_count: 0,
                edge_count: 0,
                input_token_count: 12,
                component_count: 0
            }
        );
    }

    #[test]
    fn components_count_isolated_nodes() {
        let g = SemanticGraph::from_typed_edges(&[NodeType::N; 5], &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(graph_stats(&g, 0).component_count, 3);
    }
}
