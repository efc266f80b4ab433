//! The graph-augmented encoder-decoder.
//!
//! A small transformer encodes the token sequence. Node states start as
//! pooled token states and pass through graph encoder layers that attend
//! along the augmented graph's edges. Each decoder layer attends over its
//! prefix, over the nodes (with optional score propagation) and over the
//! tokens, and fuses the two contexts.

mod attention;
mod checkpoint;
mod config;
mod layers;
mod params;
mod vocab;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{adjacency, degree_normalize, NormalizedAdjacency};
use crate::graph::{EdgeKind, NodeType, SemanticGraph};
use crate::tape::Var;
use crate::{Error, Result};

pub use attention::{
    fuse, graph_attention_scores, graph_context, graph_propagate, graph_propagate_closed_form,
    propagate_with_sign, propagated_graph_context, propagation_matrix, tape_attend, tape_fuse,
    tape_head_scores, tape_propagate,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, PropagationEdges};
pub use layers::{
    graph_decode_layer, graph_encode_layer, AttentionParams, DecoderLayerParams, DecoderMemory,
    EncoderLayerParams, FfnParams, Fwd, LayerNormParams,
};
pub use params::{ParamId, ParamSet};
pub use vocab::{Vocab, BOS, EOS, PAD, SPECIALS, UNK};

/// `n × L` matrix whose row `j` averages the token states of node `j`:
/// the mean over its phrases of the mean over each phrase's tokens. The
/// supernode row is the mean of the other rows, or of all tokens when it
/// is the only node.
pub fn node_pooling_matrix(g: &SemanticGraph, seq_len: usize) -> Result<Array2<f64>> {
    let n = g.node_count();
    let mut m = Array2::zeros((n, seq_len));
    let mut super_rows = Vec::new();
    for node in g.nodes() {
        if node.node_type == NodeType::Super {
            super_rows.push(node.id);
            continue;
        }
        let mut phrases = 0usize;
        let mut row = Array1::<f64>::zeros(seq_len);
        for ph in &node.phrases {
            let mut toks: Vec<usize> = ph
                .span
                .tokens()
                .filter(|t| g.alignment().get(t) == Some(&node.id))
                .collect();
            if toks.is_empty() {
                toks.push(ph.head_token);
            }
            if let Some(&t) = toks.iter().find(|&&t| t >= seq_len) {
                return Err(Error::Model(format!(
                    "node {} refers to token {t} beyond the {seq_len}-token input",
                    node.id
                )));
            }
            for &t in &toks {
                row[t] += 1.0 / toks.len() as f64;
            }
            phrases += 1;
        }
        if phrases == 0 {
            return Err(Error::Model(format!("node {} has no tokens", node.id)));
        }
        m.row_mut(node.id).assign(&(row / phrases as f64));
    }
    let others = n - super_rows.len();
    for s in super_rows {
        let row = if others > 0 {
            let total: Array1<f64> = g
                .nodes()
                .iter()
                .filter(|nd| nd.node_type != NodeType::Super)
                .map(|nd| m.row(nd.id).to_owned())
                .fold(Array1::zeros(seq_len), |a, r| a + r);
            total / others as f64
        } else if seq_len > 0 {
            Array1::from_elem(seq_len, 1.0 / seq_len as f64)
        } else {
            return Err(Error::Model("supernode over an empty input".into()));
        };
        m.row_mut(s).assign(&row);
    }
    Ok(m)
}

/// Initial node states from token states (`L × d`).
pub fn init_node_states(token_states: &Array2<f64>, g: &SemanticGraph) -> Result<Array2<f64>> {
    Ok(node_pooling_matrix(g, token_states.nrows())?.dot(token_states))
}

/// Per-example constants derived from the augmented graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub pooling: Array2<f64>,
    /// `mask[[i, j]]`: node `i` may attend to node `j`.
    pub mask: Array2<bool>,
    pub a_hat: NormalizedAdjacency,
}

impl GraphInputs {
    pub fn new(g: &SemanticGraph, seq_len: usize, cfg: &ModelConfig) -> Result<Self> {
        if g.node_count() == 0 {
            return Err(Error::Model(
                "graph has no nodes; add the supernode first".into(),
            ));
        }
        let mask = adjacency(g, &EdgeKind::ALL).entries;
        if let Some(i) = mask.rows().into_iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(Error::Model(format!(
                "node {i} has no incoming edges: self-loop pass missing"
            )));
        }
        let a_hat = degree_normalize(&adjacency(g, cfg.propagation_edges.kinds()))?;
        Ok(GraphInputs {
            pooling: node_pooling_matrix(g, seq_len)?,
            mask,
            a_hat,
        })
    }

    pub fn node_count(&self) -> usize {
        self.pooling.nrows()
    }
}

/// Encoder outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub tokens: Var,
    pub nodes: Var,
}

/// Encoder outputs detached from any tape, reused across decoding steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedValues {
    pub tokens: Array2<f64>,
    pub nodes: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    embed: ParamId,
    pos: ParamId,
    enc: Vec<EncoderLayerParams>,
    graph_enc: Vec<EncoderLayerParams>,
    dec: Vec<DecoderLayerParams>,
    out_w: ParamId,
    out_b: ParamId,
}

fn causal_mask(t: usize) -> Array2<bool> {
    Array2::from_shape_fn((t, t), |(i, j)| j <= i)
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = config.d_model;
        let embed = ps.glorot("embed", config.vocab_size, d, &mut rng);
        let pos = ps.glorot("pos", config.max_len, d, &mut rng);
        let enc = (0..config.enc_layers)
            .map(|i| EncoderLayerParams::new(&mut ps, &format!("enc{i}"), &config, &mut rng))
            .collect();
        let graph_enc = (0..config.graph_enc_layers)
            .map(|i| EncoderLayerParams::new(&mut ps, &format!("genc{i}"), &config, &mut rng))
            .collect();
        let dec = (0..config.dec_layers)
            .map(|i| DecoderLayerParams::new(&mut ps, &format!("dec{i}"), &config, &mut rng))
            .collect();
        let out_w = ps.glorot("out.w", d, config.vocab_size, &mut rng);
        let out_b = ps.zeros("out.b", 1, config.vocab_size);
        Ok(Model {
            config,
            params: ps,
            embed,
            pos,
            enc,
            graph_enc,
            dec,
            out_w,
            out_b,
        })
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::Model(format!(
                "{what} has {} tokens, more than max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Model(format!(
                "{what} token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, f: &mut Fwd, ids: &[usize]) -> Var {
        let (e, p) = (f.p(self.embed), f.p(self.pos));
        let x = f.tape.gather_rows(e, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pe = f.tape.gather_rows(p, &positions);
        f.tape.add(x, pe)
    }

    /// Token states (`L × d`) from the small stand-in text encoder.
    pub fn toy_text_encode(&self, f: &mut Fwd, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Model("empty input sequence".into()));
        }
        self.check_ids(ids, "input")?;
        let mut x = self.embed(f, ids);
        for layer in &self.enc {
            x = layer.apply(f, x, None, self.config.n_heads);
        }
        Ok(x)
    }

    pub fn encode(&self, f: &mut Fwd, ids: &[usize], gi: &GraphInputs) -> Result<Encoded> {
        let tokens = self.toy_text_encode(f, ids)?;
        if gi.pooling.ncols() != ids.len() {
            return Err(Error::Model(format!(
                "graph inputs were prepared for {} tokens, input has {}",
                gi.pooling.ncols(),
                ids.len()
            )));
        }
        let pool = f.tape.leaf(gi.pooling.clone());
        let mut nodes = f.tape.matmul(pool, tokens);
        for layer in &self.graph_enc {
            nodes = graph_encode_layer(f, layer, nodes, &gi.mask, self.config.n_heads);
        }
        Ok(Encoded { tokens, nodes })
    }

    /// Logits (`T × V`) for decoder input `[BOS] + prefix`.
    pub fn decode(
        &self,
        f: &mut Fwd,
        enc: Encoded,
        gi: &GraphInputs,
        prefix: &[usize],
    ) -> Result<Var> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        self.check_ids(&input, "decoder input")?;
        let causal = causal_mask(input.len());
        let a_hat_t = self
            .config
            .graph_propagation
            .then(|| f.tape.leaf(gi.a_hat.entries.t().to_owned()));
        let mem = DecoderMemory {
            tokens: enc.tokens,
            nodes: enc.nodes,
            a_hat_t,
            causal: &causal,
        };
        let mut x = self.embed(f, &input);
        for layer in &self.dec {
            x = graph_decode_layer(f, layer, x, &mem, &self.config);
        }
        let b = f.p(self.out_b);
        let logits = f.linear(x, self.out_w);
        Ok(f.tape.add_row(logits, b))
    }

    /// Label-smoothed loss for one example; `target` should end with EOS.
    pub fn loss(
        &self,
        f: &mut Fwd,
        ids: &[usize],
        gi: &GraphInputs,
        target: &[usize],
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Model("empty target".into()));
        }
        self.check_ids(target, "target")?;
        let enc = self.encode(f, ids, gi)?;
        let logits = self.decode(f, enc, gi, &target[..target.len() - 1])?;
        Ok(f.tape
            .smoothed_kl(logits, target, self.config.label_smoothing))
    }

    pub fn encode_values(&self, ids: &[usize], gi: &GraphInputs) -> Result<EncodedValues> {
        let mut f = Fwd::new(&self.params);
        let enc = self.encode(&mut f, ids, gi)?;
        Ok(EncodedValues {
            tokens: f.tape.value(enc.tokens).clone(),
            nodes: f.tape.value(enc.nodes).clone(),
        })
    }

    /// Log-probabilities of the next token after `prefix` (BOS implied).
    pub fn next_log_probs(
        &self,
        enc: &EncodedValues,
        gi: &GraphInputs,
        prefix: &[usize],
    ) -> Result<Vec<f64>> {
        let mut f = Fwd::new(&self.params);
        let e = Encoded {
            tokens: f.tape.leaf(enc.tokens.clone()),
            nodes: f.tape.leaf(enc.nodes.clone()),
        };
        let logits = self.decode(&mut f, e, gi, prefix)?;
        let v = f.tape.value(logits);
        let last = v
            .row(v.nrows() - 1)
            .to_owned()
            .insert_axis(ndarray::Axis(0));
        let max = last.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + last.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        Ok(last.iter().map(|&x| x - lse).collect())
    }

    pub fn decoder_layer(&self, i: usize) -> Option<&DecoderLayerParams> {
        self.dec.get(i)
    }
}

#[cfg(test)]
mod tests;
