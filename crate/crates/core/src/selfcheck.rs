//! The invariant suite behind `unigraph selfcheck`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{
    add_reverse_and_self_loops, add_shortcut_edges, add_supernode, adjacency, degree_normalize,
    Augmentation, NormalizedAdjacency,
};
use crate::gradcheck::{model_op_suite, GradCheckConfig};
use crate::graph::{EdgeKind, NodeType, SemanticGraph};
use crate::harness::ToyTask;
use crate::model::{
    graph_encode_layer, graph_propagate_closed_form, propagate_with_sign, EncoderLayerParams, Fwd,
    GraphInputs, Model, ModelConfig, ParamSet,
};
use crate::stats::weak_component_count;
use crate::tape::softmax_rows;

/// Deliberate bugs the suite must catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the diffusion term of the propagation recurrence.
    PropagationSignFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }
}

/// Random node types and ORIGINAL edges, each ordered pair kept with
/// probability `density`.
pub fn random_graph(rng: &mut impl Rng, n: usize, density: f64) -> SemanticGraph {
    let kinds = [NodeType::N, NodeType::V, NodeType::O];
    let types: Vec<NodeType> = (0..n).map(|_| kinds[rng.gen_range(0..3)]).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(density) {
                edges.push((u, v));
            }
        }
    }
    SemanticGraph::from_typed_edges(&types, &edges).expect("valid by construction")
}

/// `Â` of a random graph after the reverse/self-loop pass.
pub fn random_a_hat(rng: &mut impl Rng, n: usize) -> NormalizedAdjacency {
    let density = rng.gen_range(0.02..0.3);
    let g = add_reverse_and_self_loops(&random_graph(rng, n, density));
    degree_normalize(&adjacency(&g, &EdgeKind::ALL)).expect("self-loops present")
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub const OMEGAS: [f64; 4] = [0.1, 0.5, 0.9, 1.0];
pub const STEPS: [usize; 4] = [0, 1, 2, 5];

/// Worst gap between the iterative and closed-form propagation over
/// `graphs` random graphs with up to 50 nodes.
pub fn propagation_equivalence(seed: u64, graphs: usize, fault: Option<Fault>) -> f64 {
    let sign = match fault {
        Some(Fault::PropagationSignFlip) => -1.0,
        None => 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..graphs {
        let n = rng.gen_range(1..=50);
        let a_hat = random_a_hat(&mut rng, n);
        let heads = rng.gen_range(1..=4);
        let alpha = Array2::from_shape_fn((n, heads), |_| rng.gen_range(-3.0..3.0));
        for omega in OMEGAS {
            for p in STEPS {
                let it = propagate_with_sign(&alpha, &a_hat, omega, p, sign).expect("valid");
                let cf = graph_propagate_closed_form(&alpha, &a_hat, omega, p).expect("valid");
                worst = worst.max(max_abs_diff(&it, &cf));
            }
        }
    }
    worst
}

fn prop(name: &'static str, passed: bool, detail: String) -> PropertyResult {
    PropertyResult {
        name,
        passed,
        detail,
    }
}

fn propagation_linearity(rng: &mut ChaCha8Rng, sign: f64) -> PropertyResult {
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let n = rng.gen_range(2..30);
        let a_hat = random_a_hat(rng, n);
        let a1 = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let a2 = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let (x, y) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let run = |a: &Array2<f64>| propagate_with_sign(a, &a_hat, 0.9, 2, sign).expect("valid");
        let lhs = run(&(&a1 * x + &a2 * y));
        let rhs = run(&a1) * x + run(&a2) * y;
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    prop(
        "propagation_linearity",
        worst <= 1e-9,
        format!("max deviation {worst:.3e}"),
    )
}

fn softmax_normalization(rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut worst = 0.0_f64;
    let mut leaked = 0usize;
    for _ in 0..50 {
        let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..40));
        let x = Array2::from_shape_fn((r, c), |_| rng.gen_range(-50.0..50.0));
        let mut mask = Array2::from_shape_fn((r, c), |_| rng.gen_bool(0.6));
        for i in 0..r {
            mask[[i, rng.gen_range(0..c)]] = true;
        }
        let w = softmax_rows(&x, Some(&mask));
        for (i, row) in w.rows().into_iter().enumerate() {
            worst = worst.max((row.sum() - 1.0).abs());
            leaked += (0..c).filter(|&j| !mask[[i, j]] && row[j] != 0.0).count();
        }
    }
    prop(
        "softmax_normalization",
        worst <= 1e-9 && leaked == 0,
        format!("max row-sum error {worst:.3e}, masked non-zeros {leaked}"),
    )
}

fn mask_locality(rng: &mut ChaCha8Rng) -> PropertyResult {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ffn_width: 12,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let n = 7;
    let g = add_reverse_and_self_loops(&random_graph(rng, n, 0.15));
    let mask = adjacency(&g, &EdgeKind::ALL).entries;
    let mut ps = ParamSet::new();
    let x = ps.glorot("nodes", n, cfg.d_model, rng);
    let layer = EncoderLayerParams::new(&mut ps, "genc", &cfg, rng);
    let run = |ps: &ParamSet| {
        let mut f = Fwd::new(ps);
        let xv = f.p(x);
        let out = graph_encode_layer(&mut f, &layer, xv, &mask, cfg.n_heads);
        f.tape.value(out).clone()
    };
    let base = run(&ps);
    let mut violations = Vec::new();
    for j in 0..n {
        let mut moved = ps.clone();
        moved.get_mut(x).row_mut(j).mapv_inplace(|v| v + 0.5);
        let out = run(&moved);
        for i in 0..n {
            let changed = (0..cfg.d_model).any(|k| (out[[i, k]] - base[[i, k]]).abs() > 1e-12);
            if changed && !mask[[i, j]] {
                violations.push((i, j));
            }
        }
    }
    prop(
        "mask_locality",
        violations.is_empty(),
        format!("{} edges, violations {violations:?}", g.edge_count()),
    )
}

fn gradient_checks(seed: u64) -> PropertyResult {
    match model_op_suite(seed, &GradCheckConfig::default()) {
        Ok(reports) => {
            let worst = reports
                .iter()
                .map(|r| r.max_rel_error)
                .fold(0.0_f64, f64::max);
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name.as_str())
                .collect();
            prop(
                "gradient_checks",
                failed.is_empty(),
                format!(
                    "{} ops, max relative error {worst:.3e}, failed {failed:?}",
                    reports.len()
                ),
            )
        }
        Err(e) => prop("gradient_checks", false, e.to_string()),
    }
}

/// Shortcut set predicted by a boolean matrix square of the ORIGINAL and
/// REVERSE adjacency.
pub fn shortcut_oracle(g: &SemanticGraph) -> std::collections::BTreeSet<(usize, usize)> {
    let n = g.node_count();
    let sup = g.supernode();
    let mut a = Array2::<u32>::zeros((n, n));
    for e in g.edges() {
        if matches!(e.kind, EdgeKind::Original | EdgeKind::Reverse)
            && e.src != e.dst
            && Some(e.src) != sup
            && Some(e.dst) != sup
        {
            a[[e.dst, e.src]] = 1;
        }
    }
    let a2 = a.dot(&a);
    let any = adjacency(g, &EdgeKind::ALL);
    let mut out = std::collections::BTreeSet::new();
    for w in 0..n {
        for u in 0..n {
            if u != w && a2[[w, u]] > 0 && !any.get(w, u) {
                out.insert((u, w));
            }
        }
    }
    out
}

fn augmentation_oracles(rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let (mut shortcut_bad, mut comp_bad, mut col_worst) = (0, 0, 0.0_f64);
    let graphs = 12;
    for _ in 0..graphs {
        let n = rng.gen_range(1..=200);
        let density = rng.gen_range(0.0..(4.0 / n as f64).min(0.5));
        let g = random_graph(rng, n, density);
        let looped = add_reverse_and_self_loops(&g);
        let expected = shortcut_oracle(&looped);
        let got: std::collections::BTreeSet<(usize, usize)> = add_shortcut_edges(&looped)
            .edges_of(EdgeKind::Shortcut)
            .map(|e| (e.src, e.dst))
            .collect();
        shortcut_bad += usize::from(expected != got);
        let full = Augmentation::ALL.apply(&g);
        comp_bad += usize::from(weak_component_count(&full, &EdgeKind::ALL) != 1);
        let a_hat = degree_normalize(&adjacency(&full, &EdgeKind::ALL)).expect("loops present");
        for col in a_hat.entries.columns() {
            col_worst = col_worst.max((col.sum() - 1.0).abs());
        }
    }
    let sup_only = add_supernode(&SemanticGraph::default());
    comp_bad += usize::from(weak_component_count(&sup_only, &EdgeKind::ALL) != 1);
    vec![
        prop(
            "shortcut_oracle",
            shortcut_bad == 0,
            format!("{shortcut_bad} of {graphs} graphs disagree with the A² oracle"),
        ),
        prop(
            "supernode_connectivity",
            comp_bad == 0,
            format!("{comp_bad} graphs not weakly connected after the supernode"),
        ),
        prop(
            "column_stochastic",
            col_worst <= 1e-12,
            format!("max column-sum error {col_worst:.3e}"),
        ),
    ]
}

fn p0_reduction(seed: u64) -> PropertyResult {
    let run = || -> crate::Result<bool> {
        let task = ToyTask::planted(1, seed)?;
        let ex = &task.examples[0];
        let base = ModelConfig {
            d_model: 16,
            n_heads: 2,
            ffn_width: 32,
            vocab_size: task.vocab.len(),
            max_len: 32,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        };
        let logits = |cfg: ModelConfig| -> crate::Result<Array2<f64>> {
            let m = Model::new(cfg.clone(), seed)?;
            let gi = GraphInputs::new(&ex.graph, ex.input.len(), &cfg)?;
            let mut f = Fwd::new(&m.params);
            let enc = m.encode(&mut f, &ex.input, &gi)?;
            let out = m.decode(&mut f, enc, &gi, &ex.target[..ex.target.len() - 1])?;
            Ok(f.tape.value(out).clone())
        };
        let p0 = logits(ModelConfig {
            prop_steps: 0,
            ..base.clone()
        })?;
        let off = logits(ModelConfig {
            graph_propagation: false,
            ..base
        })?;
        Ok(p0 == off)
    };
    match run() {
        Ok(same) => prop("p0_reduction", same, format!("bit-identical: {same}")),
        Err(e) => prop("p0_reduction", false, e.to_string()),
    }
}

pub fn run_selfcheck(opts: &SelfCheckOptions) -> SelfCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sign = if opts.fault == Some(Fault::PropagationSignFlip) {
        -1.0
    } else {
        1.0
    };
    let worst = propagation_equivalence(opts.seed, 20, opts.fault);
    let mut properties = vec![prop(
        "propagation_equivalence",
        worst <= 1e-9,
        format!("max |iterative - closed form| {worst:.3e}"),
    )];
    properties.push(propagation_linearity(&mut rng, sign));
    properties.push(softmax_normalization(&mut rng));
    properties.push(mask_locality(&mut rng));
    properties.push(gradient_checks(opts.seed));
    properties.extend(augmentation_oracles(&mut rng));
    properties.push(p0_reduction(opts.seed));
    SelfCheckReport {
        seed: opts.seed,
        properties,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let r = run_selfcheck(&SelfCheckOptions::default());
        assert!(r.properties.len() >= 6);
        for p in &r.properties {
            assert!(p.passed, "{} {}", p.name, p.detail);
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let r = run_selfcheck(&SelfCheckOptions {
            seed: 0,
            fault: Some(Fault::PropagationSignFlip),
        });
        let eq = r
            .properties
            .iter()
            .find(|p| p.name == "propagation_equivalence")
            .unwrap();
        assert!(!eq.passed);
        assert!(!r.passed());
    }
}
