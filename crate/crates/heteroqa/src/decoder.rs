//! Answer generator: a transformer decoder whose layers fuse question
//! cross-attention and graph attention, plus greedy and beam decoding.
//!
//! Each fused layer computes, from the causally masked self-attention output
//! `p_s`, a question reading `p_q = MHAtt(p_s, question states)` and a
//! knowledge reading `p_g = MHAtt(p_s, final graph node states)`, then adds
//! them: `p_f = p_q + p_g`. MIS text reaches the decoder only through the
//! graph node vectors; the cross-attention keys are question token states
//! only. With no MIS nodes `p_g` is zero and `p_f = p_q`.

use crate::autodiff::{Matrix, Tape, Var};
use crate::encoder::QuestionEncoding;
use crate::nn::{self, TapedParams};
use crate::textprep::{BOS_ID, EOS_ID};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("decoder prefix must start with BOS")]
    MissingBos,
    #[error("prefix of {len} tokens exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
}

/// Where the graph attention sublayer lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphAttnPlacement {
    /// Inside every decoder layer (default).
    #[default]
    All,
    /// Only inside the last layer.
    Last,
}

impl std::str::FromStr for GraphAttnPlacement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(GraphAttnPlacement::All),
            "last" => Ok(GraphAttnPlacement::Last),
            other => Err(format!("unknown graph_attn_layers {other:?} (expected all|last)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    pub ffn_mult: usize,
    pub graph_attn: GraphAttnPlacement,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_positions: 128,
            ffn_mult: 2,
            graph_attn: GraphAttnPlacement::All,
        }
    }
}

impl DecoderConfig {
    pub fn layer_has_graph_attn(&self, layer: usize) -> bool {
        match self.graph_attn {
            GraphAttnPlacement::All => true,
            GraphAttnPlacement::Last => layer + 1 == self.n_layers,
        }
    }
}

/// Registers every decoder tensor under the `decoder.*` namespace.
pub fn register_params(store: &mut nn::ParamStore, cfg: &DecoderConfig, vocab_size: usize, seed: u64) {
    let d = cfg.d_model;
    store.register("decoder.tok_emb", (vocab_size, d), nn::Init::Normal { scale: 0.02 }, seed);
    store.register("decoder.pos_emb", (cfg.max_positions, d), nn::Init::Normal { scale: 0.02 }, seed);
    for layer in 0..cfg.n_layers {
        let p = format!("decoder.layer{layer}");
        nn::register_attention(store, &format!("{p}.self_attn"), d, seed);
        nn::register_layer_norm(store, &format!("{p}.ln1"), d);
        nn::register_attention(store, &format!("{p}.q_attn"), d, seed);
        if cfg.layer_has_graph_attn(layer) {
            nn::register_attention(store, &format!("{p}.g_attn"), d, seed);
        }
        nn::register_layer_norm(store, &format!("{p}.ln2"), d);
        let dff = d * cfg.ffn_mult;
        store.register(&format!("{p}.ffn.w1"), (d, dff), nn::Init::Normal { scale: 0.02 }, seed);
        store.register(&format!("{p}.ffn.b1"), (1, dff), nn::Init::Zeros, seed);
        store.register(&format!("{p}.ffn.w2"), (dff, d), nn::Init::Normal { scale: 0.02 }, seed);
        store.register(&format!("{p}.ffn.b2"), (1, d), nn::Init::Zeros, seed);
        nn::register_layer_norm(store, &format!("{p}.ln3"), d);
    }
    store.register("decoder.vocab_proj.w", (d, vocab_size), nn::Init::Normal { scale: 0.02 }, seed);
    store.register("decoder.vocab_proj.b", (1, vocab_size), nn::Init::Zeros, seed);
}

/// Per-layer intermediate states, recorded on request. Emission never
/// changes the computation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub p_s: Matrix,
    pub p_q: Matrix,
    pub p_g: Matrix,
    pub p_f: Matrix,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderTrace {
    pub layers: Vec<LayerTrace>,
}

fn ffn(tape: &Tape, tp: &TapedParams, x: Var, prefix: &str) -> Var {
    let w1 = tp.var(&format!("{prefix}.w1"));
    let b1 = tp.var(&format!("{prefix}.b1"));
    let w2 = tp.var(&format!("{prefix}.w2"));
    let b2 = tp.var(&format!("{prefix}.b2"));
    let mid = tape.add_row(tape.matmul(x, w1), b1);
    let act = tape.gelu(mid);
    tape.add_row(tape.matmul(act, w2), b2)
}

/// Teacher-forced decoder pass over a target prefix (must start with BOS).
/// `graph_nodes` are the final graph states of the MIS nodes only (question
/// row excluded). Returns per-position vocabulary logits.
pub fn forward(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &DecoderConfig,
    prefix_ids: &[u32],
    question: &QuestionEncoding,
    graph_nodes: Option<Var>,
    mut trace: Option<&mut DecoderTrace>,
) -> Result<Var, DecoderError> {
    if prefix_ids.first() != Some(&BOS_ID) {
        return Err(DecoderError::MissingBos);
    }
    if prefix_ids.len() > cfg.max_positions {
        return Err(DecoderError::TooLong {
            len: prefix_ids.len(),
            max: cfg.max_positions,
        });
    }
    let len = prefix_ids.len();
    let tok_emb = tp.var("decoder.tok_emb");
    let pos_emb = tp.var("decoder.pos_emb");
    let tok_idx: Vec<usize> = prefix_ids.iter().map(|&id| id as usize).collect();
    let pos_idx: Vec<usize> = (0..len).collect();
    let mut x = tape.add(
        tape.gather_rows(tok_emb, &tok_idx),
        tape.gather_rows(pos_emb, &pos_idx),
    );
    for layer in 0..cfg.n_layers {
        let p = format!("decoder.layer{layer}");
        let sa = nn::multi_head_attention(
            tape,
            tp,
            &format!("{p}.self_attn"),
            cfg.n_heads,
            x,
            x,
            None,
            true,
        );
        let p_s = nn::layer_norm(tape, tp, tape.add(x, sa), &format!("{p}.ln1"));
        let p_q = nn::multi_head_attention(
            tape,
            tp,
            &format!("{p}.q_attn"),
            cfg.n_heads,
            p_s,
            question.hidden,
            Some(&question.mask),
            false,
        );
        let p_g = match graph_nodes {
            Some(nodes) if cfg.layer_has_graph_attn(layer) => Some(nn::multi_head_attention(
                tape,
                tp,
                &format!("{p}.g_attn"),
                cfg.n_heads,
                p_s,
                nodes,
                None,
                false,
            )),
            _ => None,
        };
        let p_f = match p_g {
            Some(g) => tape.add(p_q, g),
            None => p_q,
        };
        if let Some(ref mut t) = trace {
            t.layers.push(LayerTrace {
                p_s: tape.value(p_s),
                p_q: tape.value(p_q),
                p_g: match p_g {
                    Some(g) => tape.value(g),
                    None => Matrix::zeros((len, cfg.d_model)),
                },
                p_f: tape.value(p_f),
            });
        }
        x = nn::layer_norm(tape, tp, tape.add(p_s, p_f), &format!("{p}.ln2"));
        let f = ffn(tape, tp, x, &format!("{p}.ffn"));
        x = nn::layer_norm(tape, tp, tape.add(x, f), &format!("{p}.ln3"));
    }
    let w = tp.var("decoder.vocab_proj.w");
    let b = tp.var("decoder.vocab_proj.b");
    Ok(tape.add_row(tape.matmul(x, w), b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    Greedy,
    Beam,
}

impl std::str::FromStr for GenerationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(GenerationMode::Greedy),
            "beam" => Ok(GenerationMode::Beam),
            other => Err(format!("unknown generation mode {other:?} (expected greedy|beam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub mode: GenerationMode,
    pub beam_width: usize,
    pub max_len: usize,
    /// Length-normalization exponent for beam ranking.
    pub length_norm: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            mode: GenerationMode::Greedy,
            beam_width: 4,
            max_len: 32,
            length_norm: 1.0,
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|x| x - lse).collect()
}

/// Argmax with id-ascending tie-break.
fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Decodes a token sequence given a step function that maps a prefix
/// (starting with BOS) to the last position's vocabulary logits. The
/// returned ids contain neither BOS nor EOS.
pub fn generate(config: &GenerationConfig, mut step: impl FnMut(&[u32]) -> Vec<f64>) -> Vec<u32> {
    assert!(config.beam_width >= 1 && config.max_len >= 1);
    match config.mode {
        GenerationMode::Greedy => {
            let mut prefix = vec![BOS_ID];
            for _ in 0..config.max_len {
                let next = argmax(&step(&prefix));
                if next == EOS_ID {
                    break;
                }
                prefix.push(next);
            }
            prefix.split_off(1)
        }
        GenerationMode::Beam => beam_search(config, &mut step),
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    ids: Vec<u32>,
    log_prob: f64,
    finished: bool,
}

impl Hypothesis {
    /// Generated length (excluding BOS), at least one for ranking.
    fn gen_len(&self) -> usize {
        (self.ids.len() - 1).max(1)
    }

    fn normalized(&self, exponent: f64) -> f64 {
        self.log_prob / (self.gen_len() as f64).powf(exponent)
    }

    fn content(&self) -> Vec<u32> {
        self.ids[1..]
            .iter()
            .copied()
            .filter(|&id| id != EOS_ID)
            .collect()
    }
}

fn beam_search(config: &GenerationConfig, step: &mut impl FnMut(&[u32]) -> Vec<f64>) -> Vec<u32> {
    let width = config.beam_width;
    let mut live = vec![Hypothesis {
        ids: vec![BOS_ID],
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let logps = log_softmax(&step(&hyp.ids));
            for (tok, lp) in logps.iter().enumerate() {
                let mut ids = hyp.ids.clone();
                ids.push(tok as u32);
                candidates.push(Hypothesis {
                    ids,
                    log_prob: hyp.log_prob + lp,
                    finished: tok as u32 == EOS_ID,
                });
            }
        }
        // stable sort: ties keep (hypothesis order, token id) order
        candidates.sort_by(|a, b| b.log_prob.partial_cmp(&a.log_prob).expect("finite"));
        candidates.truncate(width);
        live = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }
    finished.extend(live);
    finished
        .iter()
        .max_by(|a, b| {
            a.normalized(config.length_norm)
                .partial_cmp(&b.normalized(config.length_norm))
                .expect("finite")
        })
        .map(Hypothesis::content)
        .unwrap_or_default()
}
