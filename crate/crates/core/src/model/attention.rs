//! Graph attention, propagation and fusion.
//!
//! The free functions work on plain matrices for one decoder query and are
//! the reference forms: scores are `n × C` (nodes by heads). The `tape_*`
//! variants do the same for `T` queries at once on the autodiff tape, with
//! one `T × n` score matrix per head. Propagation in row form is
//! `B ← ω B Âᵀ + (1 - ω) S`, which is the column recurrence transposed.

use ndarray::{s, Array2, Axis};

use crate::augment::NormalizedAdjacency;
use crate::tape::{softmax_rows, Tape, Var};
use crate::{Error, Result};

fn check_heads(d: usize, n_heads: usize) -> Result<usize> {
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::InvalidArgument(format!(
            "width {d} is not divisible into {n_heads} heads"
        )));
    }
    Ok(d / n_heads)
}

/// Scaled dot-product scores of one query row `y` (`1 × d`) against `n`
/// node states, per head: `α[j, h] = (y W_q)_h · (v_j W_k)_h / sqrt(d_h)`.
pub fn graph_attention_scores(
    y: &Array2<f64>,
    nodes: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    n_heads: usize,
) -> Result<Array2<f64>> {
    let dh = check_heads(wq.ncols(), n_heads)?;
    let q = y.dot(wq);
    let k = nodes.dot(wk);
    let n = nodes.nrows();
    let mut out = Array2::zeros((n, n_heads));
    let scale = 1.0 / (dh as f64).sqrt();
    for h in 0..n_heads {
        let qh = q.slice(s![0, h * dh..(h + 1) * dh]);
        for j in 0..n {
            let kj = k.slice(s![j, h * dh..(h + 1) * dh]);
            out[[j, h]] = qh.iter().zip(kj.iter()).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
    }
    Ok(out)
}

/// Softmax over nodes per head, then the weighted sum of each head's value
/// slice; heads are concatenated (`1 × d`). No output projection.
pub fn graph_context(
    scores: &Array2<f64>,
    nodes: &Array2<f64>,
    wv: &Array2<f64>,
    n_heads: usize,
) -> Result<Array2<f64>> {
    let dh = check_heads(wv.ncols(), n_heads)?;
    if scores.dim() != (nodes.nrows(), n_heads) {
        return Err(Error::InvalidArgument(format!(
            "scores are {:?}, expected ({}, {n_heads})",
            scores.dim(),
            nodes.nrows()
        )));
    }
    let v = nodes.dot(wv);
    let weights = softmax_rows(&scores.t().to_owned(), None);
    let mut out = Array2::zeros((1, wv.ncols()));
    for h in 0..n_heads {
        let ctx = weights.row(h).dot(&v.slice(s![.., h * dh..(h + 1) * dh]));
        out.slice_mut(s![0, h * dh..(h + 1) * dh]).assign(&ctx);
    }
    Ok(out)
}

fn check_propagation(scores: &Array2<f64>, a_hat: &NormalizedAdjacency, omega: f64) -> Result<()> {
    if a_hat.n() != scores.nrows() {
        return Err(Error::InvalidArgument(format!(
            "adjacency is {n}x{n} but there are {} score rows",
            scores.nrows(),
            n = a_hat.n()
        )));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "omega must lie in (0, 1], got {omega}"
        )));
    }
    Ok(())
}

/// `p` steps of `β ← ω Â β + (1 - ω) α`, starting from `β = α`. Each head
/// (column) propagates independently.
pub fn graph_propagate(
    scores: &Array2<f64>,
    a_hat: &NormalizedAdjacency,
    omega: f64,
    p: usize,
) -> Result<Array2<f64>> {
    propagate_with_sign(scores, a_hat, omega, p, 1.0)
}

/// The recurrence with the diffusion term multiplied by `sign`; anything
/// but `1.0` is a deliberate fault used to test the self-check.
#[doc(hidden)]
pub fn propagate_with_sign(
    scores: &Array2<f64>,
    a_hat: &NormalizedAdjacency,
    omega: f64,
    p: usize,
    sign: f64,
) -> Result<Array2<f64>> {
    check_propagation(scores, a_hat, omega)?;
    let mut beta = scores.clone();
    for _ in 0..p {
        beta = a_hat.entries.dot(&beta) * (sign * omega) + scores * (1.0 - omega);
    }
    Ok(beta)
}

/// The matrix `M = ωᵖÂᵖ + (1 - ω) Σ_{i<p} ωⁱÂⁱ`, so that the propagated
/// scores are `M α`.
pub fn propagation_matrix(a_hat: &NormalizedAdjacency, omega: f64, p: usize) -> Array2<f64> {
    let n = a_hat.n();
    let mut power = Array2::<f64>::eye(n);
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..p {
        m = m + &power * ((1.0 - omega) * omega.powi(i as i32));
        power = a_hat.entries.dot(&power);
    }
    m + power * omega.powi(p as i32)
}

/// Same result as [`graph_propagate`], computed from the closed form.
pub fn graph_propagate_closed_form(
    scores: &Array2<f64>,
    a_hat: &NormalizedAdjacency,
    omega: f64,
    p: usize,
) -> Result<Array2<f64>> {
    check_propagation(scores, a_hat, omega)?;
    Ok(propagation_matrix(a_hat, omega, p).dot(scores))
}

#[allow(clippy::too_many_arguments)]
pub fn propagated_graph_context(
    y: &Array2<f64>,
    nodes: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    a_hat: &NormalizedAdjacency,
    omega: f64,
    p: usize,
    n_heads: usize,
) -> Result<Array2<f64>> {
    let scores = graph_attention_scores(y, nodes, wq, wk, n_heads)?;
    let beta = graph_propagate(&scores, a_hat, omega, p)?;
    graph_context(&beta, nodes, wv, n_heads)
}

/// `[g, c] W_d` with `W_d` of shape `2d × d` and no bias.
pub fn fuse(g: &Array2<f64>, c: &Array2<f64>, wd: &Array2<f64>) -> Result<Array2<f64>> {
    let d = g.ncols();
    if c.dim() != g.dim() || wd.dim() != (2 * d, d) {
        return Err(Error::InvalidArgument(format!(
            "fuse needs g, c of equal width d and W_d of 2d x d; got {:?}, {:?}, {:?}",
            g.dim(),
            c.dim(),
            wd.dim()
        )));
    }
    Ok(ndarray::concatenate(Axis(1), &[g.view(), c.view()])
        .expect("same row count")
        .dot(wd))
}

/// Per-head scaled scores `q_h k_hᵀ / sqrt(d_h)` for already projected
/// queries (`T × d`) and keys (`n × d`).
pub fn tape_head_scores(t: &mut Tape, q: Var, k: Var, n_heads: usize) -> Vec<Var> {
    let d = t.shape(q).1;
    let dh = d / n_heads;
    (0..n_heads)
        .map(|h| {
            let qh = t.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = t.slice_cols(k, h * dh, (h + 1) * dh);
            let kh = t.transpose(kh);
            let s = t.matmul(qh, kh);
            t.scale(s, 1.0 / (dh as f64).sqrt())
        })
        .collect()
}

/// Row-form propagation on the tape. `a_hat_t` holds `Âᵀ`.
pub fn tape_propagate(
    t: &mut Tape,
    scores: &[Var],
    a_hat_t: Var,
    omega: f64,
    p: usize,
) -> Vec<Var> {
    scores
        .iter()
        .map(|&alpha| {
            let mut beta = alpha;
            for _ in 0..p {
                let spread = t.matmul(beta, a_hat_t);
                beta = t.lincomb(omega, spread, 1.0 - omega, alpha);
            }
            beta
        })
        .collect()
}

/// Masked softmax per head and weighted sum of the value slices,
/// concatenated to `T × d`.
pub fn tape_attend(t: &mut Tape, scores: &[Var], v: Var, mask: Option<&Array2<bool>>) -> Var {
    let n_heads = scores.len();
    let dh = t.shape(v).1 / n_heads;
    let heads: Vec<Var> = scores
        .iter()
        .enumerate()
        .map(|(h, &sc)| {
            let w = t.softmax(sc, mask);
            let vh = t.slice_cols(v, h * dh, (h + 1) * dh);
            t.matmul(w, vh)
        })
        .collect();
    t.concat_cols(&heads)
}

pub fn tape_fuse(t: &mut Tape, g: Var, c: Var, wd: Var) -> Var {
    let gc = t.concat_cols(&[g, c]);
    t.matmul(gc, wd)
}
