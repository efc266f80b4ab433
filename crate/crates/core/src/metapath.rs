//! Meta-path enumeration over typed nodes.
//!
//! Meta-paths such as N-V-N read relations in either direction: in
//! "[Albert Einstein]-[won]-[the physics Nobel Prize]" both nouns are
//! dependents of the verb, so the path walks one ORIGINAL edge backwards.
//! [`enumerate_meta_paths`] therefore treats ORIGINAL edges as undirected;
//! [`enumerate_directed_meta_paths`] follows them head-to-dependent only.

use std::collections::BTreeSet;

use crate::graph::{EdgeKind, NodeType, SemanticGraph};
use crate::{Error, Result};

fn check_pattern(pattern: &[NodeType]) -> Result<()> {
    if !(2..=3).contains(&pattern.len()) {
        return Err(Error::InvalidArgument(format!(
            "meta-path pattern must have 2 or 3 node types, got {}",
            pattern.len()
        )));
    }
    Ok(())
}

fn walk(g: &SemanticGraph, pattern: &[NodeType], undirected: bool) -> Result<Vec<Vec<usize>>> {
    check_pattern(pattern)?;
    let n = g.node_count();
    let mut next: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in g.edges_of(EdgeKind::Original) {
        if e.src != e.dst {
            next[e.src].insert(e.dst);
            if undirected {
                next[e.dst].insert(e.src);
            }
        }
    }
    let ty = |v: usize| g.nodes()[v].node_type;
    let mut out = Vec::new();
    for u in (0..n).filter(|&u| ty(u) == pattern[0]) {
        for &v in next[u].iter().filter(|&&v| ty(v) == pattern[1]) {
            if pattern.len() == 2 {
                out.push(vec![u, v]);
                continue;
            }
            for &w in next[v].iter().filter(|&&w| ty(w) == pattern[2] && w != u) {
                out.push(vec![u, v, w]);
            }
        }
    }
    Ok(out)
}

/// Simple paths whose node types match `pattern`, stepping along ORIGINAL
/// edges in either direction. Tuples are distinct and sorted.
pub fn enumerate_meta_paths(g: &SemanticGraph, pattern: &[NodeType]) -> Result<Vec<Vec<usize>>> {
    walk(g, pattern, true)
}

/// As [`enumerate_meta_paths`] but only along edge direction.
pub fn enumerate_directed_meta_paths(
    g: &SemanticGraph,
    pattern: &[NodeType],
) -> Result<Vec<Vec<usize>>> {
    walk(g, pattern, false)
}

/// Parses `"N-V-N"` style patterns.
pub fn parse_pattern(s: &str) -> Result<Vec<NodeType>> {
    s.split('-')
        .map(|t| match t.trim() {
            "N" => Ok(NodeType::N),
            "V" => Ok(NodeType::V),
            "O" => Ok(NodeType::O),
            other => Err(Error::InvalidArgument(format!(
                "unknown node type {other:?}"
            ))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeType::*;

    #[test]
    fn svo_reads_through_the_verb() {
        // won -> Einstein, won -> prize
        let g = SemanticGraph::from_typed_edges(&[N, V, N], &[(1, 0), (1, 2)]).unwrap();
        let paths = enumerate_meta_paths(&g, &[N, V, N]).unwrap();
        assert_eq!(paths, vec![vec![0, 1, 2], vec![2, 1, 0]]);
        assert!(enumerate_directed_meta_paths(&g, &[N, V, N])
            .unwrap()
            .is_empty());
        assert_eq!(enumerate_directed_meta_paths(&g, &[V, N]).unwrap().len(), 2);
    }

    #[test]
    fn edgeless_graph_has_no_paths() {
        let g = SemanticGraph::from_typed_edges(&[N, V, N], &[]).unwrap();
        assert!(enumerate_meta_paths(&g, &[N, V, N]).unwrap().is_empty());
    }

    #[test]
    fn pattern_length_is_checked() {
        let g = SemanticGraph::from_typed_edges(&[N], &[]).unwrap();
        assert!(enumerate_meta_paths(&g, &[N]).is_err());
        assert!(enumerate_meta_paths(&g, &[N, N, N, N]).is_err());
        assert_eq!(parse_pattern("N-V-N").unwrap(), vec![N, V, N]);
        assert!(parse_pattern("N-X").is_err());
    }
}
