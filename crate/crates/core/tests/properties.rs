//! Property tests against brute-force oracles.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use unigraph::annotation::{parse_annotation_file, serialize_annotation_file};
use unigraph::augment::{
    add_reverse_and_self_loops, add_shortcut_edges, add_supernode, adjacency, degree_normalize,
    Augmentation,
};
use unigraph::build::build_graph;
use unigraph::graph::{EdgeKind, NodeType, SemanticGraph};
use unigraph::harness::{beam_search, exhaustive_search, trigram_blocked, BeamConfig};
use unigraph::metapath::{enumerate_directed_meta_paths, enumerate_meta_paths};
use unigraph::model::{graph_propagate, graph_propagate_closed_form};
use unigraph::selfcheck::shortcut_oracle;
use unigraph::stats::weak_component_count;
use unigraph::tape::softmax_rows;

fn node_type() -> impl Strategy<Value = NodeType> {
    prop_oneof![Just(NodeType::N), Just(NodeType::V), Just(NodeType::O)]
}

/// Graphs with up to `max_n` nodes and no self edges.
fn graph(max_n: usize) -> impl Strategy<Value = SemanticGraph> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(node_type(), n),
            prop::collection::vec((0..n, 0..n), 0..3 * n),
        )
            .prop_map(|(types, edges)| {
                let edges: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
                SemanticGraph::from_typed_edges(&types, &edges).unwrap()
            })
    })
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn a_hat_of(g: &SemanticGraph) -> unigraph::augment::NormalizedAdjacency {
    degree_normalize(&adjacency(&add_reverse_and_self_loops(g), &EdgeKind::ALL)).unwrap()
}

fn scores(n: usize, c: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * c)
        .prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap())
}

/// Graph plus an attention-score matrix sized to it.
fn graph_and_scores() -> impl Strategy<Value = (SemanticGraph, Array2<f64>)> {
    graph(25).prop_flat_map(|g| {
        let n = g.node_count();
        (Just(g), scores(n, 3))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shortcuts_match_boolean_square(g in graph(40)) {
        let looped = add_reverse_and_self_loops(&g);
        let got: BTreeSet<(usize, usize)> = add_shortcut_edges(&looped)
            .edges_of(EdgeKind::Shortcut)
            .map(|e| (e.src, e.dst))
            .collect();
        prop_assert_eq!(got, shortcut_oracle(&looped));
    }

    #[test]
    fn supernode_connects_everything(g in graph(40)) {
        let full = Augmentation::ALL.apply(&g);
        prop_assert_eq!(weak_component_count(&full, &EdgeKind::ALL), 1);
        let sup = full.supernode().unwrap();
        for v in 0..full.node_count() {
            prop_assert!(v == sup || (full.has_edge(sup, v, EdgeKind::SuperLink) && full.has_edge(v, sup, EdgeKind::SuperLink)));
        }
    }

    #[test]
    fn normalized_columns_sum_to_one(g in graph(40)) {
        let a_hat = degree_normalize(&adjacency(&Augmentation::ALL.apply(&g), &EdgeKind::ALL)).unwrap();
        for col in a_hat.entries.columns() {
            prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn augmentation_never_drops_edges(g in graph(30)) {
        let full = Augmentation::ALL.apply(&g);
        for e in g.edges() {
            prop_assert!(full.has_edge(e.src, e.dst, EdgeKind::Original));
            prop_assert!(full.has_edge(e.dst, e.src, EdgeKind::Reverse)
                || full.has_edge(e.dst, e.src, EdgeKind::Original));
        }
        prop_assert_eq!(add_supernode(&g).node_count(), g.node_count() + 1);
    }

    #[test]
    fn meta_paths_match_brute_force(g in graph(15), pattern in prop::collection::vec(node_type(), 2..=3)) {
        let n = g.node_count();
        let ty = |v: usize| g.nodes()[v].node_type;
        for undirected in [true, false] {
            let linked = |a: usize, b: usize| a != b
                && (g.has_edge(a, b, EdgeKind::Original)
                    || (undirected && g.has_edge(b, a, EdgeKind::Original)));
            let mut want = BTreeSet::new();
            for u in 0..n {
                for v in 0..n {
                    if pattern.len() == 2 {
                        if [ty(u), ty(v)] == pattern[..] && linked(u, v) {
                            want.insert(vec![u, v]);
                        }
                        continue;
                    }
                    for w in 0..n {
                        if u != w && [ty(u), ty(v), ty(w)] == pattern[..] && linked(u, v) && linked(v, w) {
                            want.insert(vec![u, v, w]);
                        }
                    }
                }
            }
            let got = if undirected {
                enumerate_meta_paths(&g, &pattern).unwrap()
            } else {
                enumerate_directed_meta_paths(&g, &pattern).unwrap()
            };
            prop_assert_eq!(got, want.into_iter().collect::<Vec<_>>());
        }
    }

    #[test]
    fn propagation_matches_closed_form(
        (g, alpha) in graph_and_scores(),
        omega in prop::sample::select(vec![0.1, 0.5, 0.9, 1.0]),
        p in 0usize..6,
    ) {
        let a_hat = a_hat_of(&g);
        let it = graph_propagate(&alpha, &a_hat, omega, p).unwrap();
        let cf = graph_propagate_closed_form(&alpha, &a_hat, omega, p).unwrap();
        prop_assert!(max_abs_diff(&it, &cf) <= 1e-9);
    }

    #[test]
    fn propagation_is_linear(
        (g, a1) in graph_and_scores(),
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        let a_hat = a_hat_of(&g);
        let a2 = a1.mapv(|v| (v * 1.7).sin());
        let run = |a: &Array2<f64>| graph_propagate(a, &a_hat, 0.9, 2).unwrap();
        let lhs = run(&(&a1 * x + &a2 * y));
        let rhs = run(&a1) * x + run(&a2) * y;
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-9);
    }

    #[test]
    fn propagation_keeps_column_mass((g, alpha) in graph_and_scores(), p in 0usize..5) {
        // Â is column-stochastic, so each head's total score is preserved.
        let out = graph_propagate(&alpha, &a_hat_of(&g), 0.9, p).unwrap();
        for (a, b) in alpha.columns().into_iter().zip(out.columns()) {
            prop_assert!((a.sum() - b.sum()).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        x in (1usize..6, 1usize..20).prop_flat_map(|(r, c)| scores(r, c)),
        seed in any::<u64>(),
    ) {
        let (r, c) = x.dim();
        let mask = Array2::from_shape_fn((r, c), |(i, j)| {
            j == (seed as usize + i) % c || (seed >> (j % 60)) & 1 == 1
        });
        let w = softmax_rows(&x.mapv(|v| v * 20.0), Some(&mask));
        for (i, row) in w.rows().into_iter().enumerate() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            for j in 0..c {
                prop_assert!(row[j] >= 0.0);
                if !mask[[i, j]] {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn trigram_check_matches_naive(prefix in prop::collection::vec(0usize..4, 0..15), next in 0usize..4) {
        let mut seq = prefix.clone();
        seq.push(next);
        let tris: Vec<&[usize]> = seq.windows(3).collect();
        let naive = tris.split_last().is_some_and(|(last, rest)| rest.contains(last));
        prop_assert_eq!(trigram_blocked(&prefix, next), naive);
    }

    #[test]
    fn blocked_beams_never_repeat_trigrams(
        table in prop::collection::vec(-5.0..0.0f64, 4 * 4),
        beam in 1usize..6,
        max_len in 1usize..20,
    ) {
        // Next-token scores depend only on the previous token.
        let scorer = |prefix: &[usize]| {
            let prev = prefix.last().copied().unwrap_or(0);
            table[prev * 4..prev * 4 + 4].to_vec()
        };
        let cfg = BeamConfig { beam_size: beam, max_len, eos: None, ..BeamConfig::default() };
        for h in beam_search(&scorer, &cfg).unwrap() {
            let tris: Vec<&[usize]> = h.tokens.windows(3).collect();
            let uniq: BTreeSet<&[usize]> = tris.iter().copied().collect();
            prop_assert_eq!(tris.len(), uniq.len());
        }
    }

    #[test]
    fn wide_beam_is_exhaustive(
        table in prop::collection::vec(-5.0..0.0f64, 4 * 4 * 4),
        horizon in 1usize..=3,
    ) {
        // Depends on the last two tokens; a beam of 4^horizon keeps every
        // sequence, so it must find the exhaustive optimum.
        let scorer = |prefix: &[usize]| {
            let n = prefix.len();
            let a = if n >= 2 { prefix[n - 2] } else { 0 };
            let b = prefix.last().copied().unwrap_or(0);
            let base = (a * 4 + b) * 4;
            table[base..base + 4].to_vec()
        };
        let width = 4usize.pow(horizon as u32);
        let cfg = BeamConfig {
            beam_size: width,
            max_len: horizon,
            eos: None,
            length_penalty: 0.0,
            trigram_blocking: false,
            min_len: 0,
        };
        let beam = beam_search(&scorer, &cfg).unwrap();
        let exact = exhaustive_search(&scorer, 4, horizon).unwrap();
        prop_assert_eq!(&beam[0].tokens, &exact[0].tokens);
        prop_assert!((beam[0].log_prob - exact[0].log_prob).abs() <= 1e-12);
        prop_assert_eq!(beam.len(), width);
        // Every narrower beam scores at most the exhaustive optimum.
        for k in 1..width {
            let narrow = beam_search(&scorer, &BeamConfig { beam_size: k, ..cfg }).unwrap();
            prop_assert!(narrow[0].score <= exact[0].score + 1e-12);
        }
    }
}

fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

#[test]
fn annotation_files_round_trip() {
    for rel in ["einstein.json", "corpus.json", "nested/prefix_8.json"] {
        let ds = parse_annotation_file(&std::fs::read(fixture(rel)).unwrap()).unwrap();
        let again = parse_annotation_file(serialize_annotation_file(&ds).as_bytes()).unwrap();
        assert_eq!(ds, again, "{rel}");
    }
}

#[test]
fn graph_json_round_trips() {
    let ds = parse_annotation_file(&std::fs::read(fixture("corpus.json")).unwrap()).unwrap();
    let g = build_graph(&ds);
    let full = Augmentation::ALL.apply(&g);
    for g in [g, full] {
        assert_eq!(SemanticGraph::from_json(&g.to_json()).unwrap(), g);
    }
}

#[test]
fn golden_graphs_are_stable() {
    for name in ["einstein", "corpus"] {
        let ds = parse_annotation_file(&std::fs::read(fixture(&format!("{name}.json"))).unwrap())
            .unwrap();
        let golden = std::fs::read_to_string(fixture(&format!("{name}.graph.json"))).unwrap();
        assert_eq!(build_graph(&ds).to_json() + "\n", golden, "{name}");
    }
}

#[test]
fn hand_built_adjacency_matches() {
    #[derive(serde::Deserialize)]
    struct Fixture {
        graph: SemanticGraph,
        augmented_adjacency: Vec<String>,
    }
    let f: Fixture =
        serde_json::from_slice(&std::fs::read(fixture("einstein_5node.json")).unwrap()).unwrap();
    let aug = Augmentation {
        supernode: false,
        ..Augmentation::ALL
    }
    .apply(&f.graph);
    assert_eq!(
        adjacency(&aug, &EdgeKind::ALL).to_rows(),
        f.augmented_adjacency
    );
}
