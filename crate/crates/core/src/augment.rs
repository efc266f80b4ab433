//! Graph augmentation and adjacency matrices.
//!
//! Orientation convention: `A[i][j] = 1` iff there is an edge `j -> i`, so
//! columns index sources. The normalised form `Â = A D⁻¹` divides each
//! column by its source's out-degree and is column-stochastic.

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::graph::{EdgeKind, GraphEdge, GraphNode, NodeType, SemanticGraph};
use crate::{Error, Result};

fn rebuild(
    g: &SemanticGraph,
    extra_nodes: Vec<GraphNode>,
    extra_edges: Vec<GraphEdge>,
) -> SemanticGraph {
    let (mut nodes, mut edges, alignment) = g.clone().into_parts();
    nodes.extend(extra_nodes);
    edges.extend(extra_edges);
    SemanticGraph::from_parts(nodes, edges, alignment).expect("augmentation preserves invariants")
}

fn edge_set(g: &SemanticGraph) -> BTreeSet<(usize, usize, EdgeKind)> {
    g.edges().iter().map(|e| (e.src, e.dst, e.kind)).collect()
}

/// Adds `v -> u` (REVERSE) for every ORIGINAL `u -> v`, and a SELF_LOOP on
/// every node.
pub fn add_reverse_and_self_loops(g: &SemanticGraph) -> SemanticGraph {
    let mut have = edge_set(g);
    let mut extra = Vec::new();
    for e in g.edges_of(EdgeKind::Original) {
        if have.insert((e.dst, e.src, EdgeKind::Reverse)) {
            extra.push(GraphEdge::new(e.dst, e.src, EdgeKind::Reverse));
        }
    }
    for v in 0..g.node_count() {
        if have.insert((v, v, EdgeKind::SelfLoop)) {
            extra.push(GraphEdge::new(v, v, EdgeKind::SelfLoop));
        }
    }
    rebuild(g, Vec::new(), extra)
}

/// Adds one SUPER node linked both ways to every other node. A graph that
/// already has one is returned unchanged.
pub fn add_supernode(g: &SemanticGraph) -> SemanticGraph {
    if g.supernode().is_some() {
        return g.clone();
    }
    let s = g.node_count();
    let node = GraphNode {
        id: s,
        node_type: NodeType::Super,
        phrases: Vec::new(),
        canonical_text: "<super>".to_string(),
    };
    let mut extra = Vec::with_capacity(2 * s + 1);
    for v in 0..s {
        extra.push(GraphEdge::new(s, v, EdgeKind::SuperLink));
        extra.push(GraphEdge::new(v, s, EdgeKind::SuperLink));
    }
    rebuild(g, vec![node], extra)
}

/// Adds `u -> w` (SHORTCUT) for every two-hop path `u -> v -> w` over
/// ORIGINAL and REVERSE edges with three distinct nodes, unless some edge
/// `u -> w` already exists. The supernode takes no part.
pub fn add_shortcut_edges(g: &SemanticGraph) -> SemanticGraph {
    let n = g.node_count();
    let sup = g.supernode();
    let mut next: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in g.edges() {
        if matches!(e.kind, EdgeKind::Original | EdgeKind::Reverse)
            && e.src != e.dst
            && Some(e.src) != sup
            && Some(e.dst) != sup
        {
            next[e.src].insert(e.dst);
        }
    }
    let linked: BTreeSet<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let mut shortcuts = BTreeSet::new();
    for u in 0..n {
        for &v in &next[u] {
            for &w in &next[v] {
                if w != u && !linked.contains(&(u, w)) {
                    shortcuts.insert((u, w));
                }
            }
        }
    }
    let extra = shortcuts
        .into_iter()
        .map(|(u, w)| GraphEdge::new(u, w, EdgeKind::Shortcut))
        .collect();
    rebuild(g, Vec::new(), extra)
}

/// Which augmentation passes to run. Passes run in a fixed order: reverse
/// and self-loops, then shortcuts, then the supernode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub reverse_and_self_loops: bool,
    pub shortcuts: bool,
    pub supernode: bool,
}

impl Augmentation {
    pub const ALL: Augmentation = Augmentation {
        reverse_and_self_loops: true,
        shortcuts: true,
        supernode: true,
    };
    pub const NONE: Augmentation = Augmentation {
        reverse_and_self_loops: false,
        shortcuts: false,
        supernode: false,
    };

    pub fn apply(&self, g: &SemanticGraph) -> SemanticGraph {
        let mut g = g.clone();
        if self.reverse_and_self_loops {
            g = add_reverse_and_self_loops(&g);
        }
        if self.shortcuts {
            g = add_shortcut_edges(&g);
        }
        if self.supernode {
            g = add_supernode(&g);
            if self.reverse_and_self_loops {
                // the supernode needs its own self-loop
                g = add_reverse_and_self_loops(&g);
            }
        }
        g
    }
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation::ALL
    }
}

/// Boolean adjacency with `entries[[i, j]]` set iff some edge `j -> i` has
/// a selected kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    pub entries: Array2<bool>,
}

impl AdjacencyMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn identity(n: usize) -> Self {
        AdjacencyMatrix {
            entries: Array2::from_shape_fn((n, n), |(i, j)| i == j),
        }
    }

    pub fn full(n: usize) -> Self {
        AdjacencyMatrix {
            entries: Array2::from_elem((n, n), true),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[[i, j]]
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.entries.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    /// Row-major 0/1 rendering, one row per line.
    pub fn to_rows(&self) -> Vec<String> {
        self.entries
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }
}

pub fn adjacency(g: &SemanticGraph, kinds: &[EdgeKind]) -> AdjacencyMatrix {
    let n = g.node_count();
    let mut entries = Array2::from_elem((n, n), false);
    for e in g.edges().iter().filter(|e| kinds.contains(&e.kind)) {
        entries[[e.dst, e.src]] = true;
    }
    AdjacencyMatrix { entries }
}

/// `Â = A D⁻¹`, with `D` the diagonal of source out-degrees (column sums).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub entries: Array2<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency {
            entries: Array2::eye(n),
        }
    }
}

pub fn degree_normalize(a: &AdjacencyMatrix) -> Result<NormalizedAdjacency> {
    let mut entries = a.to_f64();
    for (j, mut col) in entries.columns_mut().into_iter().enumerate() {
        let deg = col.sum();
        if deg == 0.0 {
            return Err(Error::Graph(format!(
                "node {j} has no outgoing edges: self-loop pass missing"
            )));
        }
        col.mapv_inplace(|x| x / deg);
    }
    Ok(NormalizedAdjacency { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeType::*;

    fn edges(g: &SemanticGraph) -> BTreeSet<(usize, usize, EdgeKind)> {
        edge_set(g)
    }

    #[test]
    fn reverse_and_loops_on_single_edge() {
        let g = SemanticGraph::from_typed_edges(&[N, V], &[(0, 1)]).unwrap();
        let aug = add_reverse_and_self_loops(&g);
        let got: BTreeSet<(usize, usize)> = aug.edges().iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(got, BTreeSet::from([(0, 1), (1, 0), (0, 0), (1, 1)]));
        assert_eq!(add_reverse_and_self_loops(&aug), aug);
    }

    #[test]
    fn empty_graph_passes() {
        let g = SemanticGraph::default();
        assert_eq!(add_reverse_and_self_loops(&g).node_count(), 0);
        let s = add_reverse_and_self_loops(&add_supernode(&g));
        assert_eq!(s.node_count(), 1);
        assert_eq!(s.node_types(), vec![Super]);
        assert_eq!(s.edge_count(), 1);
        assert!(s.has_edge(0, 0, EdgeKind::SelfLoop));
    }

    #[test]
    fn supernode_is_idempotent_and_links_everything() {
        let g = SemanticGraph::from_typed_edges(&[N, V, N, O], &[(1, 0), (3, 2)]).unwrap();
        let s = add_supernode(&g);
        assert_eq!(s.node_count(), 5);
        assert_eq!(s.edges_of(EdgeKind::SuperLink).count(), 8);
        assert_eq!(add_supernode(&s), s);
    }

    #[test]
    fn shortcut_on_copular_path() {
        // [Albert Einstein] -> [was] -> [a theoretical physicist]
        let g = SemanticGraph::from_typed_edges(&[N, V, N], &[(0, 1), (1, 2)]).unwrap();
        let s = add_shortcut_edges(&add_reverse_and_self_loops(&g));
        let cuts: BTreeSet<(usize, usize)> = s
            .edges_of(EdgeKind::Shortcut)
            .map(|e| (e.src, e.dst))
            .collect();
        assert_eq!(cuts, BTreeSet::from([(0, 2), (2, 0)]));
        assert_eq!(s.nodes()[0].node_type, N);
        assert_eq!(s.nodes()[2].node_type, N);
    }

    #[test]
    fn two_node_graph_has_no_shortcuts() {
        let g = SemanticGraph::from_typed_edges(&[N, N], &[(0, 1)]).unwrap();
        let s = add_shortcut_edges(&add_reverse_and_self_loops(&g));
        assert_eq!(s.edges_of(EdgeKind::Shortcut).count(), 0);
    }

    #[test]
    fn supernode_does_not_create_shortcuts() {
        let g = SemanticGraph::from_typed_edges(&[N, N, N, N], &[(0, 1)]).unwrap();
        let g = add_supernode(&add_reverse_and_self_loops(&g));
        let s = add_shortcut_edges(&g);
        assert_eq!(edges(&s), edges(&g));
    }

    #[test]
    fn adjacency_conventions() {
        let g = SemanticGraph::from_typed_edges(&[N, V, N], &[(1, 0), (1, 2)]).unwrap();
        let loops = SemanticGraph::from_parts(
            g.nodes().to_vec(),
            (0..3)
                .map(|v| GraphEdge::new(v, v, EdgeKind::SelfLoop))
                .collect(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(
            adjacency(&loops, &EdgeKind::ALL),
            AdjacencyMatrix::identity(3)
        );
        let a = adjacency(&g, &[EdgeKind::Original]);
        assert!(a.get(0, 1) && a.get(2, 1));
        assert_eq!(a.nnz(), 2);
        let aug = Augmentation::ALL.apply(&g);
        assert!(
            adjacency(&aug, &[EdgeKind::Original]).nnz() < adjacency(&aug, &EdgeKind::ALL).nnz()
        );
    }

    #[test]
    fn normalisation_divides_by_out_degree() {
        let eye = AdjacencyMatrix::identity(4);
        assert_eq!(
            degree_normalize(&eye).unwrap(),
            NormalizedAdjacency::identity(4)
        );
        // node 0 points at {0, 1, 2}
        let mut a = AdjacencyMatrix::identity(3);
        a.entries[[1, 0]] = true;
        a.entries[[2, 0]] = true;
        let na = degree_normalize(&a).unwrap();
        for i in 0..3 {
            assert_eq!(na.entries[[i, 0]], 1.0 / 3.0);
        }
        let mut z = AdjacencyMatrix::identity(2);
        z.entries[[1, 1]] = false;
        assert!(
            matches!(degree_normalize(&z), Err(Error::Graph(m)) if m.contains("self-loop pass missing"))
        );
    }
}
