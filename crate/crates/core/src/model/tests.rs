use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::annotation::{AnnotatedDocument, DependencyEdge, DocumentSet, Token};
use crate::augment::{AdjacencyMatrix, Augmentation};
use crate::build::build_graph;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn ring_a_hat(n: usize) -> NormalizedAdjacency {
    let mut a = AdjacencyMatrix::identity(n);
    for j in 0..n {
        a.entries[[(j + 1) % n, j]] = true;
        a.entries[[(j + 3) % n, j]] = true;
    }
    degree_normalize(&a).unwrap()
}

/// "the cat sat on the mat ."
fn small_graph() -> (SemanticGraph, usize) {
    let rows = [
        ("the", "DET", 1, "det"),
        ("cat", "NOUN", 2, "nsubj"),
        ("sat", "VERB", -1, "root"),
        ("on", "ADP", 5, "case"),
        ("the", "DET", 5, "det"),
        ("mat", "NOUN", 2, "obl"),
        (".", "PUNCT", 2, "punct"),
    ];
    let doc = AnnotatedDocument {
        doc_id: "d".into(),
        tokens: rows
            .iter()
            .enumerate()
            .map(|(i, r)| Token {
                index: i,
                text: r.0.into(),
                pos_tag: r.1.into(),
                sentence_id: 0,
                is_punct: r.1 == "PUNCT",
            })
            .collect(),
        dependency_edges: rows
            .iter()
            .enumerate()
            .map(|(i, r)| DependencyEdge {
                head: (r.2 >= 0).then_some(r.2 as usize),
                dependent: i,
                relation: r.3.into(),
            })
            .collect(),
        coref_chains: vec![],
    };
    let ds = DocumentSet::new(vec![doc]).unwrap();
    (Augmentation::ALL.apply(&build_graph(&ds)), rows.len())
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        ffn_width: 24,
        enc_layers: 1,
        graph_enc_layers: 1,
        dec_layers: 2,
        vocab_size: 12,
        max_len: 16,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    }
}

#[test]
fn iterative_and_closed_form_propagation_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a_hat = ring_a_hat(6);
    let alpha = rand_mat(&mut rng, 6, 3);
    for p in 0..6 {
        for omega in [0.3, 0.9, 1.0] {
            let it = graph_propagate(&alpha, &a_hat, omega, p).unwrap();
            let cf = graph_propagate_closed_form(&alpha, &a_hat, omega, p).unwrap();
            let err = (&it - &cf).mapv(f64::abs).fold(0.0_f64, |m, &x| m.max(x));
            assert!(err < 1e-12, "p={p} omega={omega} err={err}");
        }
    }
    assert_eq!(graph_propagate(&alpha, &a_hat, 0.9, 0).unwrap(), alpha);
}

#[test]
fn propagation_rejects_bad_arguments() {
    let a_hat = ring_a_hat(4);
    let alpha = Array2::zeros((5, 2));
    assert!(graph_propagate(&alpha, &a_hat, 0.9, 2).is_err());
    let alpha = Array2::zeros((4, 2));
    assert!(graph_propagate(&alpha, &a_hat, 0.0, 2).is_err());
    assert!(graph_propagate(&alpha, &a_hat, 1.2, 2).is_err());
}

#[test]
fn tape_ops_match_reference_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, heads, n, t_len) = (8, 2, 5, 3);
    let ys = rand_mat(&mut rng, t_len, d);
    let nodes = rand_mat(&mut rng, n, d);
    let (wq, wk, wv) = (
        rand_mat(&mut rng, d, d),
        rand_mat(&mut rng, d, d),
        rand_mat(&mut rng, d, d),
    );
    let a_hat = ring_a_hat(n);

    let mut t = crate::tape::Tape::new();
    let (yv, nv) = (t.leaf(ys.clone()), t.leaf(nodes.clone()));
    let (q_w, k_w, v_w) = (t.leaf(wq.clone()), t.leaf(wk.clone()), t.leaf(wv.clone()));
    let q = t.matmul(yv, q_w);
    let k = t.matmul(nv, k_w);
    let v = t.matmul(nv, v_w);
    let scores = tape_head_scores(&mut t, q, k, heads);
    let a_t = t.leaf(a_hat.entries.t().to_owned());
    let beta = tape_propagate(&mut t, &scores, a_t, 0.9, 2);
    let ctx = tape_attend(&mut t, &beta, v, None);

    for row in 0..t_len {
        let y = ys.row(row).to_owned().insert_axis(ndarray::Axis(0));
        let s = graph_attention_scores(&y, &nodes, &wq, &wk, heads).unwrap();
        let b = graph_propagate(&s, &a_hat, 0.9, 2).unwrap();
        for h in 0..heads {
            for j in 0..n {
                assert!((t.value(scores[h])[[row, j]] - s[[j, h]]).abs() < 1e-12);
                assert!((t.value(beta[h])[[row, j]] - b[[j, h]]).abs() < 1e-12);
            }
        }
        let c = propagated_graph_context(&y, &nodes, &wq, &wk, &wv, &a_hat, 0.9, 2, heads).unwrap();
        for col in 0..d {
            assert!((t.value(ctx)[[row, col]] - c[[0, col]]).abs() < 1e-12);
        }
    }
}

#[test]
fn fuse_checks_shapes() {
    let g = Array2::ones((1, 4));
    let wd = Array2::eye(8).slice(ndarray::s![.., 0..4]).to_owned();
    let out = fuse(&g, &(&g * 2.0), &wd).unwrap();
    assert_eq!(out, g);
    assert!(fuse(&g, &g, &Array2::zeros((4, 4))).is_err());
    assert!(fuse(&g, &Array2::zeros((1, 3)), &wd).is_err());
}

#[test]
fn pooling_averages_phrase_tokens() {
    let (g, len) = small_graph();
    let m = node_pooling_matrix(&g, len).unwrap();
    for row in m.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    let cat = g.find_node("the cat").unwrap().id;
    assert_eq!(m[[cat, 0]], 0.5);
    assert_eq!(m[[cat, 1]], 0.5);
    assert!(node_pooling_matrix(&g, 3).is_err());
    let bare = SemanticGraph::from_typed_edges(&[NodeType::N], &[]).unwrap();
    let err = node_pooling_matrix(&bare, 4).unwrap_err().to_string();
    assert!(err.contains("no tokens"), "{err}");
}

#[test]
fn forward_is_finite_and_p0_matches_no_propagation() {
    let (g, len) = small_graph();
    let cfg = tiny_config();
    let ids: Vec<usize> = (4..4 + len).collect();
    let prefix = [5, 6, 7];
    let logits_for = |cfg: ModelConfig| {
        let m = Model::new(cfg.clone(), 9).unwrap();
        let gi = GraphInputs::new(&g, len, &cfg).unwrap();
        let mut f = Fwd::new(&m.params);
        let enc = m.encode(&mut f, &ids, &gi).unwrap();
        let l = m.decode(&mut f, enc, &gi, &prefix).unwrap();
        f.tape.value(l).clone()
    };
    let with_p2 = logits_for(cfg.clone());
    assert!(with_p2.iter().all(|x| x.is_finite()));
    assert_eq!(with_p2.dim(), (prefix.len() + 1, cfg.vocab_size));
    let p0 = logits_for(ModelConfig {
        prop_steps: 0,
        ..cfg.clone()
    });
    let off = logits_for(ModelConfig {
        graph_propagation: false,
        ..cfg.clone()
    });
    assert_eq!(p0, off);
    assert_ne!(p0, with_p2);
}

#[test]
fn dropout_is_seeded_and_off_by_default() {
    let (g, len) = small_graph();
    let cfg = tiny_config();
    let ids: Vec<usize> = (4..4 + len).collect();
    let m = Model::new(cfg.clone(), 9).unwrap();
    let gi = GraphInputs::new(&g, len, &cfg).unwrap();
    let run = |mut f: Fwd| {
        let enc = m.encode(&mut f, &ids, &gi).unwrap();
        let l = m.decode(&mut f, enc, &gi, &[5, 6]).unwrap();
        f.tape.value(l).clone()
    };
    let plain = run(Fwd::new(&m.params));
    assert_eq!(plain, run(Fwd::with_dropout(&m.params, 0.0, 1)));
    let a = run(Fwd::with_dropout(&m.params, 0.3, 1));
    assert_ne!(a, plain);
    assert_eq!(a, run(Fwd::with_dropout(&m.params, 0.3, 1)));
    assert_ne!(a, run(Fwd::with_dropout(&m.params, 0.3, 2)));
}

#[test]
fn supernode_only_graph_still_runs() {
    let g = Augmentation::ALL.apply(&SemanticGraph::default());
    let cfg = tiny_config();
    let m = Model::new(cfg.clone(), 1).unwrap();
    let gi = GraphInputs::new(&g, 4, &cfg).unwrap();
    let enc = m.encode_values(&[4, 5, 6, 7], &gi).unwrap();
    assert_eq!(enc.nodes.nrows(), 1);
    let lp = m.next_log_probs(&enc, &gi, &[4]).unwrap();
    assert!(lp.iter().all(|x| x.is_finite()));
    let total: f64 = lp.iter().map(|x| x.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn unaugmented_graph_is_rejected() {
    let (g, len) = small_graph();
    let _ = g;
    let plain = SemanticGraph::from_typed_edges(&[NodeType::N, NodeType::V], &[(1, 0)]).unwrap();
    let err = GraphInputs::new(&plain, len, &tiny_config())
        .unwrap_err()
        .to_string();
    assert!(err.contains("self-loop"), "{err}");
}

#[test]
fn over_long_input_is_an_error() {
    let cfg = tiny_config();
    let m = Model::new(cfg.clone(), 1).unwrap();
    let mut f = Fwd::new(&m.params);
    let ids = vec![4; cfg.max_len + 1];
    let err = m.toy_text_encode(&mut f, &ids).unwrap_err().to_string();
    assert!(err.contains("max_len"), "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let (g, len) = small_graph();
    let cfg = tiny_config();
    let m = Model::new(cfg.clone(), 5).unwrap();
    let vocab = Vocab::new(["the", "cat", "sat", "on", "mat", ".", "a", "b"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &m, &vocab).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.vocab, vocab);
    assert_eq!(back.model.params, m.params);
    let gi = GraphInputs::new(&g, len, &cfg).unwrap();
    let ids: Vec<usize> = (4..4 + len).collect();
    let a = m.encode_values(&ids, &gi).unwrap();
    let b = back.model.encode_values(&ids, &gi).unwrap();
    assert_eq!(a, b);

    std::fs::write(&path, b"nonsense").unwrap();
    assert!(load_checkpoint(&path).is_err());
}
