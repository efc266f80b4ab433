//! The unified semantic graph: typed phrase-level nodes, kind-tagged edges
//! and the token-to-node alignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    N,
    V,
    O,
    #[serde(rename = "SUPER")]
    Super,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::N => "N",
            NodeType::V => "V",
            NodeType::O => "O",
            NodeType::Super => "SUPER",
        }
    }

    fn dot_shape(self) -> &'static str {
        match self {
            NodeType::N => "box",
            NodeType::V => "ellipse",
            NodeType::O => "diamond",
            NodeType::Super => "doublecircle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    Original,
    Reverse,
    SelfLoop,
    Shortcut,
    SuperLink,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::Original,
        EdgeKind::Reverse,
        EdgeKind::SelfLoop,
        EdgeKind::Shortcut,
        EdgeKind::SuperLink,
    ];

    fn dot_style(self) -> &'static str {
        match self {
            EdgeKind::Original => "solid",
            EdgeKind::Shortcut => "dashed",
            EdgeKind::Reverse | EdgeKind::SelfLoop => "dotted",
            EdgeKind::SuperLink => "invis",
        }
    }
}

/// A contiguous run of tokens inside one sentence. `sentence` is the global
/// sentence number; `start`/`end` (inclusive) are positions in the
/// concatenation of all documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn tokens(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    #[serde(flatten)]
    pub span: TokenSpan,
    #[serde(rename = "head")]
    pub head_token: usize,
    #[serde(rename = "type")]
    pub phrase_type: NodeType,
    pub text: String,
    /// Head token is a pronoun; such phrases never become canonical text
    /// when a named mention exists.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pronominal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub phrases: Vec<Phrase>,
    #[serde(rename = "canonical")]
    pub canonical_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    #[serde(rename = "rel", default, skip_serializing_if = "Option::is_none")]
    pub relation_label: Option<String>,
}

impl GraphEdge {
    pub fn new(src: usize, dst: usize, kind: EdgeKind) -> Self {
        GraphEdge {
            src,
            dst,
            kind,
            relation_label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemanticGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    alignment: BTreeMap<usize, usize>,
}

impl SemanticGraph {
    /// Assembles a graph, checking ids are dense, endpoints and alignment
    /// targets exist, and no `(src, dst, kind)` repeats.
    pub fn from_parts(
        nodes: Vec<GraphNode>,
        edges: Vec<GraphEdge>,
        alignment: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let g = SemanticGraph {
            nodes,
            edges,
            alignment,
        };
        g.check()?;
        Ok(g)
    }

    /// A phrase-less graph with the given node types and ORIGINAL edges;
    /// mostly useful for synthetic inputs.
    pub fn from_typed_edges(types: &[NodeType], edges: &[(usize, usize)]) -> Result<Self> {
        let nodes = types
            .iter()
            .enumerate()
            .map(|(id, &node_type)| GraphNode {
                id,
                node_type,
                phrases: Vec::new(),
                canonical_text: format!("n{id}"),
            })
            .collect();
        let mut seen = HashSet::new();
        let edges = edges
            .iter()
            .filter(|e| seen.insert(**e))
            .map(|&(s, d)| GraphEdge::new(s, d, EdgeKind::Original))
            .collect();
        SemanticGraph::from_parts(nodes, edges, BTreeMap::new())
    }

    fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Graph(format!(
                    "node at position {i} has id {}",
                    node.id
                )));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Graph(format!(
                    "edge {}->{} references a node outside 0..{n}",
                    e.src, e.dst
                )));
            }
            if !seen.insert((e.src, e.dst, e.kind)) {
                return Err(Error::Graph(format!(
                    "duplicate {:?} edge {}->{}",
                    e.kind, e.src, e.dst
                )));
            }
        }
        if let Some((tok, node)) = self.alignment.iter().find(|(_, &node)| node >= n) {
            return Err(Error::Graph(format!(
                "token {tok} aligned to missing node {node}"
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn alignment(&self) -> &BTreeMap<usize, usize> {
        &self.alignment
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_types(&self) -> Vec<NodeType> {
        self.nodes.iter().map(|n| n.node_type).collect()
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    pub fn has_edge(&self, src: usize, dst: usize, kind: EdgeKind) -> bool {
        self.edges
            .iter()
            .any(|e| e.src == src && e.dst == dst && e.kind == kind)
    }

    pub fn supernode(&self) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.node_type == NodeType::Super)
    }

    /// Node whose canonical text matches, case-insensitively.
    pub fn find_node(&self, text: &str) -> Option<&GraphNode> {
        self.nodes
            .iter()
            .find(|n| n.canonical_text.eq_ignore_ascii_case(text))
    }

    pub(crate) fn into_parts(self) -> (Vec<GraphNode>, Vec<GraphEdge>, BTreeMap<usize, usize>) {
        (self.nodes, self.edges, self.alignment)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph types always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: SemanticGraph = serde_json::from_str(s).map_err(|e| Error::Parse {
            offset: 0,
            message: e.to_string(),
        })?;
        g.check()?;
        Ok(g)
    }

    /// Graphviz rendering: shape by node type, line style by edge kind.
    /// Reverse and self-loop edges are omitted as they only restate the
    /// original structure.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph semantic_graph {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let label = n.canonical_text.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(
                out,
                "  n{} [label=\"{}\", shape={}];",
                n.id,
                label,
                n.node_type.dot_shape()
            );
        }
        for e in &self.edges {
            if matches!(e.kind, EdgeKind::Reverse | EdgeKind::SelfLoop) {
                continue;
            }
            let _ = write!(
                out,
                "  n{} -> n{} [style={}",
                e.src,
                e.dst,
                e.kind.dot_style()
            );
            if let Some(rel) = &e.relation_label {
                let _ = write!(out, ", label=\"{rel}\"");
            }
            out.push_str("];\n");
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_edges_and_dangling_endpoints() {
        let nodes = SemanticGraph::from_typed_edges(&[NodeType::N, NodeType::V], &[])
            .unwrap()
            .nodes
            .clone();
        let dup = vec![
            GraphEdge::new(0, 1, EdgeKind::Original),
            GraphEdge::new(0, 1, EdgeKind::Original),
        ];
        assert!(SemanticGraph::from_parts(nodes.clone(), dup, BTreeMap::new()).is_err());
        let dangling = vec![GraphEdge::new(0, 5, EdgeKind::Original)];
        assert!(SemanticGraph::from_parts(nodes.clone(), dangling, BTreeMap::new()).is_err());
        let bad_align = BTreeMap::from([(0, 9)]);
        assert!(SemanticGraph::from_parts(nodes, vec![], bad_align).is_err());
    }

    #[test]
    fn json_uses_wire_names() {
        let g = SemanticGraph::from_typed_edges(&[NodeType::N, NodeType::V], &[(1, 0)]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["nodes"][0]["type"], "N");
        assert_eq!(v["nodes"][1]["canonical"], "n1");
        assert_eq!(v["edges"][0]["kind"], "ORIGINAL");
        assert_eq!(SemanticGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn dot_shapes_and_styles() {
        let mut g =
            SemanticGraph::from_typed_edges(&[NodeType::N, NodeType::V, NodeType::O], &[(1, 0)])
                .unwrap();
        g.edges.push(GraphEdge::new(2, 0, EdgeKind::Shortcut));
        let dot = g.to_dot();
        assert!(dot.contains("n0 [label=\"n0\", shape=box]"));
        assert!(dot.contains("shape=ellipse"));
        assert!(dot.contains("shape=diamond"));
        assert!(dot.contains("n1 -> n0 [style=solid]"));
        assert!(dot.contains("n2 -> n0 [style=dashed]"));
    }
}
