//! Question-aware graph transformer: typed key/value projections, edge-typed
//! attention, heterogeneous message passing, question-aware rescaling,
//! residual update, layer stacking, and the node-score regression head.
//!
//! Per layer and target node t with in-neighbors N(t):
//!
//! ```text
//! K(t) = MLP_k[type(t)](D[t])          V(s) = MLP_v[type(s)](D[s])
//! alpha(s,e,t)   = softmax over N(t) of K(t) W[edge(e)] V(s)' / sqrt(d/h)
//! M(s,e,t)       = MLP_msg[type(s)](D[s]) Wmsg[edge(e)]
//! beta(s)        = D[q] Wr D[s]'
//! alpha_hat      = alpha * beta(s)
//! D~[t]          = sum over N(t) of alpha_hat * M
//! D^[t]          = gelu(MLP_out[type(t)](D~[t])) + D[t]
//! ```
//!
//! The softmax runs jointly over all in-edges of a target (across edge
//! types), per head. Every "MLP" is a single affine map. With one head the
//! computation is the literal single-head form used by the by-hand oracles.
//! Targets with no in-neighbors pass through unchanged. The question node is
//! a target like any other.
//!
//! Ablation wiring: the heterogeneous-transformer baseline drops the beta
//! rescale (`alpha_hat = alpha`); the homogeneous baseline replaces the whole
//! layer with a type-blind graph-attention layer.

use crate::autodiff::{Matrix, Tape, Var};
use crate::graph::{EdgeType, HeteroGraph, NodeId};
use crate::nn::{affine, Init, ParamStore, TapedParams};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QgtConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Pass beta through a sigmoid for stability; default off (raw beta).
    pub beta_sigmoid: bool,
}

impl Default for QgtConfig {
    fn default() -> Self {
        QgtConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            beta_sigmoid: false,
        }
    }
}

/// Which graph layer the model runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Question-aware graph transformer; `question_aware: false` is the
    /// heterogeneous-transformer ablation (beta bypassed).
    Qgt { question_aware: bool },
    /// Homogeneous graph attention, ignoring node and edge types.
    Gat,
}

/// Raw and rescaled attention for one in-edge of a target, per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEntry {
    pub src: NodeId,
    pub etype: EdgeType,
    pub alpha: Vec<f64>,
    pub alpha_hat: Vec<f64>,
}

/// Attention weights keyed by target node, in in-edge insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionMap {
    pub entries: BTreeMap<NodeId, Vec<AttentionEntry>>,
}

/// Question relevance beta per node, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    pub beta: Vec<f64>,
}

/// Message vector per edge (heads concatenated to `d_model`).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEntry {
    pub src: NodeId,
    pub etype: EdgeType,
    pub dst: NodeId,
    pub message: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageSet {
    pub entries: Vec<MessageEntry>,
}

/// One layer's outputs: next states plus inspection values.
pub struct LayerOut {
    pub states: Var,
    pub attention: AttentionMap,
    pub relevance: Option<RelevanceVector>,
    pub messages: MessageSet,
}

/// Registers one QGT layer's tensors. `out_init` is zero by default so a
/// fresh layer is the identity map; gradient checking uses a dense init.
pub fn register_layer_params(
    store: &mut ParamStore,
    cfg: &QgtConfig,
    layer: usize,
    kind: LayerKind,
    seed: u64,
    out_init: Init,
) {
    let d = cfg.d_model;
    let p = format!("qgt.layer{layer}");
    match kind {
        LayerKind::Qgt { .. } => {
            assert_eq!(d % cfg.n_heads, 0, "d_model must divide n_heads");
            let dh = d / cfg.n_heads;
            for ntype in crate::graph::NodeType::ALL {
                for proj in ["k_proj", "v_proj", "msg_proj"] {
                    store.register(&format!("{p}.{proj}.{ntype}.w"), (d, d), Init::Normal { scale: 0.02 }, seed);
                    store.register(&format!("{p}.{proj}.{ntype}.b"), (1, d), Init::Zeros, seed);
                }
                store.register(&format!("{p}.out_proj.{ntype}.w"), (d, d), out_init, seed);
                store.register(&format!("{p}.out_proj.{ntype}.b"), (1, d), Init::Zeros, seed);
            }
            for etype in EdgeType::ALL {
                for head in 0..cfg.n_heads {
                    store.register(&format!("{p}.attn_w.{etype}.h{head}"), (dh, dh), Init::Normal { scale: 0.02 }, seed);
                    store.register(&format!("{p}.msg_w.{etype}.h{head}"), (dh, dh), Init::Normal { scale: 0.02 }, seed);
                }
            }
            store.register(&format!("{p}.w_r"), (d, d), Init::Normal { scale: 0.02 }, seed);
        }
        LayerKind::Gat => {
            store.register(&format!("{p}.gat.w"), (d, d), Init::Normal { scale: 0.02 }, seed);
            store.register(&format!("{p}.gat.a"), (1, 2 * d), Init::Normal { scale: 0.02 }, seed);
        }
    }
}

pub fn register_all_layers(
    store: &mut ParamStore,
    cfg: &QgtConfig,
    kind: LayerKind,
    seed: u64,
    out_init: Init,
) {
    for layer in 0..cfg.n_layers {
        register_layer_params(store, cfg, layer, kind, seed, out_init);
    }
}

/// Registers the node-score regression head under `heads.*`.
pub fn register_score_head(store: &mut ParamStore, d_model: usize, seed: u64) {
    store.register("heads.score.w", (d_model, 1), Init::Normal { scale: 0.02 }, seed);
    store.register("heads.score.b", (1, 1), Init::Zeros, seed);
}

fn in_edges_by_target(graph: &HeteroGraph) -> Vec<Vec<usize>> {
    let mut by_target: Vec<Vec<usize>> = vec![Vec::new(); graph.n_nodes()];
    for (ei, e) in graph.edges.iter().enumerate() {
        by_target[e.dst].push(ei);
    }
    by_target
}

/// One graph layer on the tape. `states` is `n_nodes x d_model`.
pub fn layer_forward(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &QgtConfig,
    graph: &HeteroGraph,
    states: Var,
    layer: usize,
    kind: LayerKind,
) -> LayerOut {
    let n = graph.n_nodes();
    let (rows_n, d) = tape.dim(states);
    assert_eq!(rows_n, n, "one state row per node");
    assert_eq!(d, cfg.d_model);
    let rows: Vec<Var> = (0..n).map(|i| tape.gather_rows(states, &[i])).collect();
    match kind {
        LayerKind::Qgt { question_aware } => {
            qgt_layer(tape, tp, cfg, graph, &rows, layer, question_aware)
        }
        LayerKind::Gat => gat_layer(tape, tp, cfg, graph, &rows, layer),
    }
}

// the head index drives column ranges, parameter names, and message lookup
#[allow(clippy::needless_range_loop)]
fn qgt_layer(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &QgtConfig,
    graph: &HeteroGraph,
    rows: &[Var],
    layer: usize,
    question_aware: bool,
) -> LayerOut {
    let n = graph.n_nodes();
    let h = cfg.n_heads;
    let dh = cfg.d_model / h;
    let p = format!("qgt.layer{layer}");
    let proj = |which: &str, i: usize| {
        let ntype = graph.nodes[i].ntype;
        affine(tape, tp, rows[i], &format!("{p}.{which}.{ntype}"))
    };
    let k_proj: Vec<Var> = (0..n).map(|i| proj("k_proj", i)).collect();
    let v_proj: Vec<Var> = (0..n).map(|i| proj("v_proj", i)).collect();
    let msg_proj: Vec<Var> = (0..n).map(|i| proj("msg_proj", i)).collect();

    let beta: Option<Vec<Var>> = question_aware.then(|| {
        let w_r = tp.var(&format!("{p}.w_r"));
        let qw = tape.matmul(rows[graph.question], w_r);
        (0..n)
            .map(|i| {
                let raw = tape.matmul(qw, tape.transpose(rows[i]));
                if cfg.beta_sigmoid {
                    tape.sigmoid(raw)
                } else {
                    raw
                }
            })
            .collect()
    });

    // per-edge, per-head messages
    let msg_heads: Vec<Vec<Var>> = graph
        .edges
        .iter()
        .map(|e| {
            (0..h)
                .map(|j| {
                    let slice = tape.slice_cols(msg_proj[e.src], j * dh, (j + 1) * dh);
                    let w = tp.var(&format!("{p}.msg_w.{}.h{j}", e.etype));
                    tape.matmul(slice, w)
                })
                .collect()
        })
        .collect();

    let by_target = in_edges_by_target(graph);
    let mut new_rows: Vec<Var> = rows.to_vec();
    let mut attention = AttentionMap::default();
    for t in 0..n {
        let edges = &by_target[t];
        if edges.is_empty() {
            continue;
        }
        let mut entries: Vec<AttentionEntry> = edges
            .iter()
            .map(|&ei| AttentionEntry {
                src: graph.edges[ei].src,
                etype: graph.edges[ei].etype,
                alpha: Vec::with_capacity(h),
                alpha_hat: Vec::with_capacity(h),
            })
            .collect();
        let mut head_aggs = Vec::with_capacity(h);
        for j in 0..h {
            let kt = tape.slice_cols(k_proj[t], j * dh, (j + 1) * dh);
            let scores: Vec<Var> = edges
                .iter()
                .map(|&ei| {
                    let e = &graph.edges[ei];
                    let w = tp.var(&format!("{p}.attn_w.{}.h{j}", e.etype));
                    let vs = tape.slice_cols(v_proj[e.src], j * dh, (j + 1) * dh);
                    tape.matmul(tape.matmul(kt, w), tape.transpose(vs))
                })
                .collect();
            let score_row = tape.concat_cols(&scores);
            let scaled = tape.scale(score_row, 1.0 / (dh as f64).sqrt());
            let alpha = tape.softmax_rows(scaled);
            let alpha_hat = match &beta {
                Some(b) => {
                    let beta_row = tape.concat_cols(
                        &edges
                            .iter()
                            .map(|&ei| b[graph.edges[ei].src])
                            .collect::<Vec<_>>(),
                    );
                    tape.mul(alpha, beta_row)
                }
                None => alpha,
            };
            let alpha_v = tape.value(alpha);
            let alpha_hat_v = tape.value(alpha_hat);
            for (col, entry) in entries.iter_mut().enumerate() {
                entry.alpha.push(alpha_v[[0, col]]);
                entry.alpha_hat.push(alpha_hat_v[[0, col]]);
            }
            let msgs = tape.concat_rows(
                &edges.iter().map(|&ei| msg_heads[ei][j]).collect::<Vec<_>>(),
            );
            head_aggs.push(tape.matmul(alpha_hat, msgs));
        }
        let agg = tape.concat_cols(&head_aggs);
        let ntype = graph.nodes[t].ntype;
        let out = affine(tape, tp, agg, &format!("{p}.out_proj.{ntype}"));
        new_rows[t] = tape.add(tape.gelu(out), rows[t]);
        attention.entries.insert(t, entries);
    }

    let messages = MessageSet {
        entries: graph
            .edges
            .iter()
            .zip(&msg_heads)
            .map(|(e, heads)| {
                let mut message = Vec::with_capacity(cfg.d_model);
                for head in heads {
                    message.extend(tape.value(*head).iter().copied());
                }
                MessageEntry {
                    src: e.src,
                    etype: e.etype,
                    dst: e.dst,
                    message,
                }
            })
            .collect(),
    };
    let relevance = beta.as_ref().map(|b| RelevanceVector {
        beta: b.iter().map(|v| tape.scalar(*v)).collect(),
    });
    LayerOut {
        states: tape.concat_rows(&new_rows),
        attention,
        relevance,
        messages,
    }
}

const GAT_LEAKY_SLOPE: f64 = 0.2;

fn gat_layer(
    tape: &Tape,
    tp: &TapedParams,
    _cfg: &QgtConfig,
    graph: &HeteroGraph,
    rows: &[Var],
    layer: usize,
) -> LayerOut {
    let n = graph.n_nodes();
    let p = format!("qgt.layer{layer}");
    let w = tp.var(&format!("{p}.gat.w"));
    let a = tp.var(&format!("{p}.gat.a"));
    let wd: Vec<Var> = rows.iter().map(|r| tape.matmul(*r, w)).collect();
    let by_target = in_edges_by_target(graph);
    let mut new_rows: Vec<Var> = rows.to_vec();
    let mut attention = AttentionMap::default();
    for t in 0..n {
        let edges = &by_target[t];
        if edges.is_empty() {
            continue;
        }
        let scores: Vec<Var> = edges
            .iter()
            .map(|&ei| {
                let src = graph.edges[ei].src;
                let cat = tape.concat_cols(&[wd[src], wd[t]]);
                tape.leaky_relu(tape.matmul(a, tape.transpose(cat)), GAT_LEAKY_SLOPE)
            })
            .collect();
        let alpha = tape.softmax_rows(tape.concat_cols(&scores));
        let alpha_v = tape.value(alpha);
        let entries = edges
            .iter()
            .enumerate()
            .map(|(col, &ei)| AttentionEntry {
                src: graph.edges[ei].src,
                etype: graph.edges[ei].etype,
                alpha: vec![alpha_v[[0, col]]],
                alpha_hat: vec![alpha_v[[0, col]]],
            })
            .collect();
        attention.entries.insert(t, entries);
        let srcs = tape.concat_rows(
            &edges
                .iter()
                .map(|&ei| wd[graph.edges[ei].src])
                .collect::<Vec<_>>(),
        );
        let agg = tape.matmul(alpha, srcs);
        new_rows[t] = tape.add(tape.gelu(agg), rows[t]);
    }
    let messages = MessageSet {
        entries: graph
            .edges
            .iter()
            .map(|e| MessageEntry {
                src: e.src,
                etype: e.etype,
                dst: e.dst,
                message: tape.value(wd[e.src]).iter().copied().collect(),
            })
            .collect(),
    };
    LayerOut {
        states: tape.concat_rows(&new_rows),
        attention,
        relevance: None,
        messages,
    }
}

/// Stacks `cfg.n_layers` graph layers; each layer consumes the previous
/// layer's output. Returns the final states and per-layer diagnostics.
pub fn forward(
    tape: &Tape,
    tp: &TapedParams,
    cfg: &QgtConfig,
    graph: &HeteroGraph,
    states0: Var,
    kind: LayerKind,
) -> (Var, Vec<LayerOut>) {
    assert!(cfg.n_layers >= 1, "need at least one layer");
    let mut states = states0;
    let mut outs = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let out = layer_forward(tape, tp, cfg, graph, states, layer, kind);
        states = out.states;
        outs.push(out);
    }
    (states, outs)
}

/// Scalar score per node: a linear map of each node's final representation.
pub fn predict_node_scores(tape: &Tape, tp: &TapedParams, final_states: Var) -> Var {
    affine(tape, tp, final_states, "heads.score")
}

// ---- plain-matrix wrappers (fresh scratch tape), used by tests and tools ----

pub fn attention_scores(
    graph: &HeteroGraph,
    states: &Matrix,
    store: &ParamStore,
    cfg: &QgtConfig,
    layer: usize,
    kind: LayerKind,
) -> AttentionMap {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, store);
    let s = tape.leaf(states.clone());
    layer_forward(&tape, &tp, cfg, graph, s, layer, kind).attention
}

pub fn question_relevance(
    graph: &HeteroGraph,
    states: &Matrix,
    store: &ParamStore,
    cfg: &QgtConfig,
    layer: usize,
) -> RelevanceVector {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, store);
    let w_r = tp.var(&format!("qgt.layer{layer}.w_r"));
    let s = tape.leaf(states.clone());
    let q = tape.gather_rows(s, &[graph.question]);
    let qw = tape.matmul(q, w_r);
    let beta = (0..graph.n_nodes())
        .map(|i| {
            let row = tape.gather_rows(s, &[i]);
            let raw = tape.matmul(qw, tape.transpose(row));
            if cfg.beta_sigmoid {
                tape.scalar(tape.sigmoid(raw))
            } else {
                tape.scalar(raw)
            }
        })
        .collect();
    RelevanceVector { beta }
}

pub fn messages(
    graph: &HeteroGraph,
    states: &Matrix,
    store: &ParamStore,
    cfg: &QgtConfig,
    layer: usize,
    kind: LayerKind,
) -> MessageSet {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, store);
    let s = tape.leaf(states.clone());
    layer_forward(&tape, &tp, cfg, graph, s, layer, kind).messages
}

/// One layer as next-layer states on plain matrices.
pub fn aggregate_update(
    graph: &HeteroGraph,
    states: &Matrix,
    store: &ParamStore,
    cfg: &QgtConfig,
    layer: usize,
    kind: LayerKind,
) -> Matrix {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, store);
    let s = tape.leaf(states.clone());
    let out = layer_forward(&tape, &tp, cfg, graph, s, layer, kind);
    tape.value(out.states)
}

/// Full multi-layer forward on plain matrices.
pub fn forward_matrix(
    graph: &HeteroGraph,
    states0: &Matrix,
    store: &ParamStore,
    cfg: &QgtConfig,
    kind: LayerKind,
) -> Matrix {
    let tape = Tape::new();
    let tp = TapedParams::new(&tape, store);
    let s = tape.leaf(states0.clone());
    let (final_states, _) = forward(&tape, &tp, cfg, graph, s, kind);
    tape.value(final_states)
}

/// Nodes whose layer-0 state can influence `target`'s state after
/// `k_layers` updates. With question-aware rescaling every non-isolated
/// target also depends on the question node through beta.
pub fn dependency_ancestors(
    graph: &HeteroGraph,
    target: NodeId,
    k_layers: usize,
    question_aware: bool,
) -> BTreeSet<NodeId> {
    let by_target = in_edges_by_target(graph);
    let mut current: BTreeSet<NodeId> = BTreeSet::from([target]);
    for _ in 0..k_layers {
        let mut next = current.clone();
        for &x in &current {
            let edges = &by_target[x];
            for &ei in edges {
                next.insert(graph.edges[ei].src);
            }
            if question_aware && !edges.is_empty() {
                next.insert(graph.question);
            }
        }
        current = next;
    }
    current
}
