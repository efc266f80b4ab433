use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{tape_attend, tape_fuse, tape_head_scores, tape_propagate};
use super::params::{ParamId, ParamSet};
use super::ModelConfig;
use crate::tape::{Tape, Var};

const LN_EPS: f64 = 1e-5;

/// One forward pass: a tape plus the parameters bound onto it.
pub struct Fwd<'a> {
    pub tape: Tape,
    params: &'a ParamSet,
    bound: Vec<Option<Var>>,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<'a> Fwd<'a> {
    pub fn new(params: &'a ParamSet) -> Self {
        Fwd {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_dropout(params: &'a ParamSet, rate: f64, seed: u64) -> Self {
        Fwd {
            dropout: rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Fwd::new(params)
        }
    }

    /// The tape variable for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        if self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let shape = self.tape.shape(x);
        let rng = &mut self.rng;
        let mask = Array2::from_shape_fn(shape, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.tape.leaf(mask);
        self.tape.mul(x, m)
    }

    /// `dropout(x) · w`. Every learned projection goes through here, so
    /// dropout sits in front of each linear layer.
    pub fn linear(&mut self, x: Var, w: ParamId) -> Var {
        let x = self.dropout(x);
        let w = self.p(w);
        self.tape.matmul(x, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> Self {
        LayerNormParams {
            gain: ps.ones(&format!("{name}.gain"), 1, d),
            bias: ps.zeros(&format!("{name}.bias"), 1, d),
        }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Var {
        let (g, b) = (f.p(self.gain), f.p(self.bias));
        let n = f.tape.normalize_rows(x, LN_EPS);
        let n = f.tape.mul_row(n, g);
        f.tape.add_row(n, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FfnParams {
            w1: ps.glorot(&format!("{name}.w1"), d, width, rng),
            b1: ps.zeros(&format!("{name}.b1"), 1, width),
            w2: ps.glorot(&format!("{name}.w2"), width, d, rng),
            b2: ps.zeros(&format!("{name}.b2"), 1, d),
        }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Var {
        let (b1, b2) = (f.p(self.b1), f.p(self.b2));
        let h = f.linear(x, self.w1);
        let h = f.tape.add_row(h, b1);
        let h = f.tape.gelu(h);
        let o = f.linear(h, self.w2);
        f.tape.add_row(o, b2)
    }
}

/// Query, key and value projections, plus an output projection when the
/// attention result is not fed to a fusion layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: Option<ParamId>,
}

impl AttentionParams {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        output: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        AttentionParams {
            wq: ps.glorot(&format!("{name}.wq"), d, d, rng),
            wk: ps.glorot(&format!("{name}.wk"), d, d, rng),
            wv: ps.glorot(&format!("{name}.wv"), d, d, rng),
            wo: output.then(|| ps.glorot(&format!("{name}.wo"), d, d, rng)),
        }
    }

    /// Per-head scores of `queries` against `keys`.
    pub fn scores(&self, f: &mut Fwd, queries: Var, keys: Var, n_heads: usize) -> (Vec<Var>, Var) {
        let q = f.linear(queries, self.wq);
        let k = f.linear(keys, self.wk);
        let v = f.linear(keys, self.wv);
        (tape_head_scores(&mut f.tape, q, k, n_heads), v)
    }

    pub fn apply(
        &self,
        f: &mut Fwd,
        queries: Var,
        keys: Var,
        mask: Option<&Array2<bool>>,
        n_heads: usize,
    ) -> Var {
        let (scores, v) = self.scores(f, queries, keys, n_heads);
        let out = tape_attend(&mut f.tape, &scores, v, mask);
        self.project(f, out)
    }

    fn project(&self, f: &mut Fwd, x: Var) -> Var {
        match self.wo {
            Some(wo) => f.linear(x, wo),
            None => x,
        }
    }
}

/// Post-LN transformer encoder layer; the graph encoder uses the same
/// layer with an adjacency mask.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

impl EncoderLayerParams {
    pub fn new(ps: &mut ParamSet, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        EncoderLayerParams {
            attn: AttentionParams::new(ps, &format!("{name}.attn"), d, true, rng),
            ln1: LayerNormParams::new(ps, &format!("{name}.ln1"), d),
            ffn: FfnParams::new(ps, &format!("{name}.ffn"), d, cfg.ffn_width, rng),
            ln2: LayerNormParams::new(ps, &format!("{name}.ln2"), d),
        }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var, mask: Option<&Array2<bool>>, n_heads: usize) -> Var {
        let a = self.attn.apply(f, x, x, mask, n_heads);
        let h = f.tape.add(x, a);
        let h = self.ln1.apply(f, h);
        let o = self.ffn.apply(f, h);
        let o = f.tape.add(h, o);
        self.ln2.apply(f, o)
    }
}

/// Graph encoder layer: node `i` attends to node `j` iff the augmented
/// graph has an edge `j -> i`.
pub fn graph_encode_layer(
    f: &mut Fwd,
    layer: &EncoderLayerParams,
    nodes: Var,
    mask: &Array2<bool>,
    n_heads: usize,
) -> Var {
    layer.apply(f, nodes, Some(mask), n_heads)
}

/// What the decoder layers read besides their own input.
pub struct DecoderMemory<'m> {
    pub tokens: Var,
    pub nodes: Var,
    /// `Âᵀ` as a constant, when propagation is on.
    pub a_hat_t: Option<Var>,
    pub causal: &'m Array2<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub graph_attn: AttentionParams,
    pub text_attn: AttentionParams,
    pub wd: ParamId,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
    pub ln3: LayerNormParams,
}

impl DecoderLayerParams {
    pub fn new(ps: &mut ParamSet, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        DecoderLayerParams {
            self_attn: AttentionParams::new(ps, &format!("{name}.self"), d, true, rng),
            ln1: LayerNormParams::new(ps, &format!("{name}.ln1"), d),
            graph_attn: AttentionParams::new(ps, &format!("{name}.graph"), d, false, rng),
            text_attn: AttentionParams::new(ps, &format!("{name}.text"), d, false, rng),
            wd: ps.glorot(&format!("{name}.wd"), 2 * d, d, rng),
            ln2: LayerNormParams::new(ps, &format!("{name}.ln2"), d),
            ffn: FfnParams::new(ps, &format!("{name}.ffn"), d, cfg.ffn_width, rng),
            ln3: LayerNormParams::new(ps, &format!("{name}.ln3"), d),
        }
    }
}

/// Causal self-attention, graph attention (optionally propagated), text
/// cross-attention, fusion `[g, c] W_d`, then the feed-forward block.
pub fn graph_decode_layer(
    f: &mut Fwd,
    layer: &DecoderLayerParams,
    x: Var,
    mem: &DecoderMemory,
    cfg: &ModelConfig,
) -> Var {
    let heads = cfg.n_heads;
    let a = layer.self_attn.apply(f, x, x, Some(mem.causal), heads);
    let s = f.tape.add(x, a);
    let s = layer.ln1.apply(f, s);

    let (scores, v) = layer.graph_attn.scores(f, s, mem.nodes, heads);
    let scores = match mem.a_hat_t {
        Some(a_hat_t) => tape_propagate(&mut f.tape, &scores, a_hat_t, cfg.omega, cfg.prop_steps),
        None => scores,
    };
    let g = tape_attend(&mut f.tape, &scores, v, None);
    let c = layer.text_attn.apply(f, s, mem.tokens, None, heads);
    let (g, c) = (f.dropout(g), f.dropout(c));
    let wd = f.p(layer.wd);
    let fused = tape_fuse(&mut f.tape, g, c, wd);
    let h = f.tape.add(s, fused);
    let h = layer.ln2.apply(f, h);

    let o = layer.ffn.apply(f, h);
    let o = f.tape.add(h, o);
    layer.ln3.apply(f, o)
}
