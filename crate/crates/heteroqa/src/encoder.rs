//! Token-level transformer encoder and mean-pooled node initialization.
//!
//! One shared encoder serves the question and every node type. Each node's
//! initial graph state is the mean over unmasked token positions of its
//! encoded text; the question's unpooled hidden states are kept for decoder
//! cross-attention.

use crate::autodiff::{Tape, Var};
use crate::graph::HeteroGraph;
use crate::nn::{self, TapedParams};
use crate::textprep::PAD_ID;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence of {len} tokens exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("mean pooling over an all-masked sequence")]
    AllMasked,
    #[error("node {node_id}: {source}")]
    Node {
        node_id: usize,
        source: Box<EncoderError>,
    },
}

/// Desk-scale defaults; the full-scale reference configuration (6 layers,
/// 12 heads, hidden 768) is reachable through the same fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    pub ffn_mult: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_positions: 128,
            ffn_mult: 2,
        }
    }
}

/// Registers every encoder tensor under the `encoder.*` namespace.
pub fn register_params(store: &mut nn::ParamStore, cfg: &EncoderConfig, vocab_size: usize, seed: u64) {
    let d = cfg.d_model;
    store.register("encoder.tok_emb", (vocab_size, d), nn::Init::Normal { scale: 0.02 }, seed);
    store.register("encoder.pos_emb", (cfg.max_positions, d), nn::Init::Normal { scale: 0.02 }, seed);
    for layer in 0..cfg.n_layers {
        let p = format!("encoder.layer{layer}");
        nn::register_attention(store, &format!("{p}.attn"), d, seed);
        nn::register_layer_norm(store, &format!("{p}.ln1"), d);
        let dff = d * cfg.ffn_mult;
        store.register(&format!("{p}.ffn.w1"), (d, dff), nn::Init::Normal { scale: 0.02 }, seed);
        store.register(&format!("{p}.ffn.b1"), (1, dff), nn::Init::Zeros, seed);
        store.register(&format!("{p}.ffn.w2"), (dff, d), nn::Init::Normal { scale: 0.02 }, seed);
        store.register(&format!("{p}.ffn.b2"), (1, d), nn::Init::Zeros, seed);
        nn::register_layer_norm(store, &format!("{p}.ln2"), d);
    }
}

/// Unpooled question encoding: per-token hidden states plus validity mask.
pub struct QuestionEncoding {
    pub hidden: Var,
    pub mask: Vec<bool>,
}

/// Feed-forward block `w1 -> gelu -> w2` with the given prefix.
fn ffn(tape: &Tape, tp: &TapedParams, x: Var, prefix: &str) -> Var {
    let w1 = tp.var(&format!("{prefix}.w1"));
    let b1 = tp.var(&format!("{prefix}.b1"));
    let w2 = tp.var(&format!("{prefix}.w2"));
    let b2 = tp.var(&format!("{prefix}.b2"));
    let mid = tape.add_row(tape.matmul(x, w1), b1);
    let act = tape.gelu(mid);
    tape.add_row(tape.matmul(act, w2), b2)
}

/// Encodes an id sequence: embeddings plus learned positions, then
/// `n_layers` of (self-attention, FFN) with residuals and layer norms.
/// PAD positions are masked out of attention. Returns the hidden states
/// (`L x d_model`) and the validity mask.
pub fn encode_sequence(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &EncoderConfig,
    ids: &[u32],
) -> Result<(Var, Vec<bool>), EncoderError> {
    if ids.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    if ids.len() > cfg.max_positions {
        return Err(EncoderError::TooLong {
            len: ids.len(),
            max: cfg.max_positions,
        });
    }
    let mask: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
    if !mask.iter().any(|&m| m) {
        return Err(EncoderError::AllMasked);
    }
    let tok_emb = tp.var("encoder.tok_emb");
    let pos_emb = tp.var("encoder.pos_emb");
    let tok_idx: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
    let pos_idx: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather_rows(tok_emb, &tok_idx);
    let pos = tape.gather_rows(pos_emb, &pos_idx);
    let mut x = tape.add(tok, pos);
    for layer in 0..cfg.n_layers {
        let p = format!("encoder.layer{layer}");
        let attn = nn::multi_head_attention(
            tape,
            tp,
            &format!("{p}.attn"),
            cfg.n_heads,
            x,
            x,
            Some(&mask),
            false,
        );
        x = nn::layer_norm(tape, tp, tape.add(x, attn), &format!("{p}.ln1"));
        let f = ffn(tape, tp, x, &format!("{p}.ffn"));
        x = nn::layer_norm(tape, tp, tape.add(x, f), &format!("{p}.ln2"));
    }
    Ok((x, mask))
}

/// Arithmetic mean over unmasked rows only.
pub fn mean_pool(tape: &Tape, hidden: Var, mask: &[bool]) -> Result<Var, EncoderError> {
    let keep: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(EncoderError::AllMasked);
    }
    let rows = tape.gather_rows(hidden, &keep);
    Ok(tape.mean_rows(rows))
}

/// Initializes graph node states: one pooled row per node, in node id order.
/// The question row is pooled from the same encoding whose unpooled form is
/// returned as [`QuestionEncoding`].
pub fn init_graph_states(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &EncoderConfig,
    graph: &HeteroGraph,
    node_ids: &[Vec<u32>],
) -> Result<(Var, QuestionEncoding), EncoderError> {
    assert_eq!(node_ids.len(), graph.n_nodes(), "one id list per node");
    let mut rows = Vec::with_capacity(graph.n_nodes());
    let mut question = None;
    for (node, ids) in graph.nodes.iter().zip(node_ids) {
        let wrap = |source: EncoderError| EncoderError::Node {
            node_id: node.id,
            source: Box::new(source),
        };
        let (hidden, mask) = encode_sequence(tape, tp, cfg, ids).map_err(wrap)?;
        rows.push(mean_pool(tape, hidden, &mask).map_err(wrap)?);
        if node.id == graph.question {
            question = Some(QuestionEncoding { hidden, mask });
        }
    }
    let states = tape.concat_rows(&rows);
    Ok((states, question.expect("graph has a question node")))
}
