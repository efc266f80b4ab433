//! Finite-difference gradient checks.
//!
//! Everything being checked, inputs included, lives in a [`ParamSet`]. The
//! forward closure binds what it needs through [`Fwd::p`]. The scalar
//! checked is `Σ out ⊙ R` for a fixed random `R`, so every output entry
//! contributes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{
    graph_decode_layer, graph_encode_layer, tape_attend, tape_fuse, tape_head_scores,
    tape_propagate, DecoderLayerParams, DecoderMemory, EncoderLayerParams, Fwd, ModelConfig,
    ParamSet,
};
use crate::tape::Var;
use crate::Result;

/// Per-parameter gradients, `None` where a parameter was unused.
type ParamGrads = Vec<Option<Array2<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and entry of the worst error.
    pub worst: Option<(String, usize, usize)>,
    /// Set when a value or gradient was NaN or infinite; names the tensor.
    pub non_finite: Option<String>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= self.tolerance
    }
}

fn projected(
    params: &ParamSet,
    forward: &dyn Fn(&mut Fwd) -> Result<Var>,
    proj: &mut Option<Array2<f64>>,
    seed: u64,
) -> Result<(f64, ParamGrads, bool)> {
    let mut f = Fwd::new(params);
    let out = forward(&mut f)?;
    let shape = f.tape.shape(out);
    let r = proj
        .get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
        })
        .clone();
    let finite = f.tape.value(out).iter().all(|x| x.is_finite());
    let rv = f.tape.leaf(r);
    let prod = f.tape.mul(out, rv);
    let loss = f.tape.sum(prod);
    let value = f.tape.value(loss)[[0, 0]];
    let grads = f.tape.backward(loss);
    let mut per_param = vec![None; params.len()];
    for (id, v) in f.bound() {
        per_param[id.0] = grads.get(v).cloned();
    }
    Ok((value, per_param, finite))
}

/// Compares tape gradients of every tensor in `params` with central
/// differences.
pub fn check_gradients(
    name: &str,
    params: &ParamSet,
    forward: &dyn Fn(&mut Fwd) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        non_finite: params.first_non_finite().map(str::to_string),
        tolerance: cfg.tolerance,
    };
    if report.non_finite.is_some() {
        return Ok(report);
    }
    let mut proj = None;
    let (_, analytic, finite) = projected(params, forward, &mut proj, cfg.seed)?;
    if !finite {
        report.non_finite = Some("output".into());
        return Ok(report);
    }
    let mut work = params.clone();
    for id in params.ids() {
        let shape = params.get(id).dim();
        let a = analytic[id.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(shape));
        if a.iter().any(|x| !x.is_finite()) {
            report.non_finite = Some(params.name(id).to_string());
            return Ok(report);
        }
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let orig = params.get(id)[[i, j]];
                work.get_mut(id)[[i, j]] = orig + cfg.eps;
                let (up, _, _) = projected(&work, forward, &mut proj, cfg.seed)?;
                work.get_mut(id)[[i, j]] = orig - cfg.eps;
                let (down, _, _) = projected(&work, forward, &mut proj, cfg.seed)?;
                work.get_mut(id)[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * cfg.eps);
                if !numeric.is_finite() {
                    report.non_finite = Some(params.name(id).to_string());
                    return Ok(report);
                }
                let an = a[[i, j]];
                let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(cfg.floor);
                report.checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((params.name(id).to_string(), i, j));
                }
            }
        }
    }
    Ok(report)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        ffn_width: 12,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    }
}

/// A strongly connected 5-node `Âᵀ` with self-loops.
fn test_a_hat_t(n: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n);
    for j in 0..n {
        a[[(j + 1) % n, j]] = 1.0;
        a[[(j + 2) % n, j]] = 1.0;
    }
    for mut col in a.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|x| x / s);
    }
    a.t().to_owned()
}

/// Gradient checks for the graph-attention operators and both graph
/// layers at a small width.
pub fn model_op_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mc = small_config();
    let (d, heads, n, t_len, l) = (mc.d_model, mc.n_heads, 5, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = ParamSet::new();
    let y = base.glorot("queries", t_len, d, &mut rng);
    let nodes = base.glorot("nodes", n, d, &mut rng);
    let wq = base.glorot("wq", d, d, &mut rng);
    let wk = base.glorot("wk", d, d, &mut rng);
    let wv = base.glorot("wv", d, d, &mut rng);
    let a_t = test_a_hat_t(n);
    let mut out = Vec::new();

    let scores_of = |f: &mut Fwd| {
        let (yv, nv, q_w, k_w) = (f.p(y), f.p(nodes), f.p(wq), f.p(wk));
        let q = f.tape.matmul(yv, q_w);
        let k = f.tape.matmul(nv, k_w);
        tape_head_scores(&mut f.tape, q, k, heads)
    };
    out.push(check_gradients(
        "graph_attention_scores",
        &base,
        &|f| {
            let s = scores_of(f);
            Ok(f.tape.concat_cols(&s))
        },
        cfg,
    )?);
    out.push(check_gradients(
        "graph_context",
        &base,
        &|f| {
            let s = scores_of(f);
            let (nv, v_w) = (f.p(nodes), f.p(wv));
            let v = f.tape.matmul(nv, v_w);
            Ok(tape_attend(&mut f.tape, &s, v, None))
        },
        cfg,
    )?);

    let mut prop = ParamSet::new();
    let alpha = prop.glorot("alpha", t_len, n, &mut rng);
    out.push(check_gradients(
        "graph_propagate",
        &prop,
        &|f| {
            let a = f.p(alpha);
            let at = f.tape.leaf(a_t.clone());
            Ok(tape_propagate(&mut f.tape, &[a], at, mc.omega, mc.prop_steps)[0])
        },
        cfg,
    )?);

    let mut fz = ParamSet::new();
    let g = fz.glorot("g", t_len, d, &mut rng);
    let c = fz.glorot("c", t_len, d, &mut rng);
    let wd = fz.glorot("wd", 2 * d, d, &mut rng);
    out.push(check_gradients(
        "fuse",
        &fz,
        &|f| {
            let (gv, cv, w) = (f.p(g), f.p(c), f.p(wd));
            Ok(tape_fuse(&mut f.tape, gv, cv, w))
        },
        cfg,
    )?);

    let mut enc = ParamSet::new();
    let x = enc.glorot("nodes", n, d, &mut rng);
    let layer = EncoderLayerParams::new(&mut enc, "genc", &mc, &mut rng);
    let mask = a_t.t().mapv(|v| v > 0.0);
    out.push(check_gradients(
        "graph_encode_layer",
        &enc,
        &|f| {
            let xv = f.p(x);
            Ok(graph_encode_layer(f, &layer, xv, &mask, heads))
        },
        cfg,
    )?);

    let mut dec = ParamSet::new();
    let x = dec.glorot("prefix", t_len, d, &mut rng);
    let toks = dec.glorot("tokens", l, d, &mut rng);
    let nv = dec.glorot("nodes", n, d, &mut rng);
    let layer = DecoderLayerParams::new(&mut dec, "dec", &mc, &mut rng);
    let causal = Array2::from_shape_fn((t_len, t_len), |(i, j)| j <= i);
    out.push(check_gradients(
        "graph_decode_layer",
        &dec,
        &|f| {
            let a_hat_t = Some(f.tape.leaf(a_t.clone()));
            let mem = DecoderMemory {
                tokens: f.p(toks),
                nodes: f.p(nv),
                a_hat_t,
                causal: &causal,
            };
            let xv = f.p(x);
            Ok(graph_decode_layer(f, &layer, xv, &mem, &mc))
        },
        cfg,
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ops_pass() {
        for r in model_op_suite(1, &GradCheckConfig::default()).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // The forward drifts between calls, so the differences disagree
        // with the tape.
        let mut ps = ParamSet::new();
        let x = ps.push("x", Array2::from_elem((1, 3), 0.3));
        let calls = std::cell::Cell::new(0u32);
        let r = check_gradients(
            "drifting",
            &ps,
            &|f| {
                calls.set(calls.get() + 1);
                let v = f.p(x);
                Ok(f.tape.scale(v, 1.0 + calls.get() as f64 * 1e-3))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn non_finite_parameter_is_named() {
        let mut ps = ParamSet::new();
        let x = ps.push("weights", Array2::from_elem((1, 2), f64::NAN));
        let r = check_gradients("nan", &ps, &|f| Ok(f.p(x)), &GradCheckConfig::default()).unwrap();
        assert_eq!(r.non_finite.as_deref(), Some("weights"));
        assert!(!r.passed());
    }
}
