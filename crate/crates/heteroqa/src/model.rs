//! End-to-end model assembly: configuration, parameter registration across
//! the encoder / graph / decoder namespaces, the per-sample forward pass,
//! and generation contexts.

use crate::autodiff::{Matrix, Tape, Var};
use crate::dataset::TrainingSample;
use crate::decoder::{self, DecoderConfig, DecoderError, GenerationConfig, GraphAttnPlacement};
use crate::encoder::{self, EncoderConfig, EncoderError, QuestionEncoding};
use crate::graph::{build_graph_with, GraphConfig, HeteroGraph};
use crate::nn::{Init, ParamStore, TapedParams};
use crate::qgt::{self, LayerKind, QgtConfig};
use crate::textprep::{tokenize, TokenizerMode, Vocabulary, BOS_ID, EOS_ID};
use thiserror::Error;

/// Model-level ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Original heterogeneous graph transformer: beta rescale bypassed.
    NoQuestionAware,
    /// Graph auxiliary loss removed (psi forced to zero, loss term skipped).
    NoGraphLoss,
    /// Homogeneous GAT layers instead of typed graph layers.
    HomogeneousGat,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_question_aware" => Ok(Ablation::NoQuestionAware),
            "no_graph_loss" => Ok(Ablation::NoGraphLoss),
            "homogeneous_gat" => Ok(Ablation::HomogeneousGat),
            other => Err(format!(
                "unknown ablation {other:?} (expected full|no_question_aware|no_graph_loss|homogeneous_gat)"
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Ablation::Full => "full",
            Ablation::NoQuestionAware => "no_question_aware",
            Ablation::NoGraphLoss => "no_graph_loss",
            Ablation::HomogeneousGat => "homogeneous_gat",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub ffn_mult: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub qgt_layers: usize,
    pub qgt_heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub graph_attn: GraphAttnPlacement,
    pub beta_sigmoid: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            max_positions: 128,
            ffn_mult: 2,
            encoder_layers: 2,
            encoder_heads: 4,
            qgt_layers: 2,
            qgt_heads: 2,
            decoder_layers: 2,
            decoder_heads: 4,
            graph_attn: GraphAttnPlacement::All,
            beta_sigmoid: false,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.encoder_layers,
            n_heads: self.encoder_heads,
            max_positions: self.max_positions,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn qgt_config(&self) -> QgtConfig {
        QgtConfig {
            d_model: self.d_model,
            n_heads: self.qgt_heads,
            n_layers: self.qgt_layers,
            beta_sigmoid: self.beta_sigmoid,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            d_model: self.d_model,
            n_layers: self.decoder_layers,
            n_heads: self.decoder_heads,
            max_positions: self.max_positions,
            ffn_mult: self.ffn_mult,
            graph_attn: self.graph_attn,
        }
    }

    /// The graph layer the ablation wires in.
    pub fn layer_kind(&self) -> LayerKind {
        match self.ablation {
            Ablation::Full | Ablation::NoGraphLoss => LayerKind::Qgt { question_aware: true },
            Ablation::NoQuestionAware => LayerKind::Qgt { question_aware: false },
            Ablation::HomogeneousGat => LayerKind::Gat,
        }
    }
}

/// Initialization profile: training starts graph layers at the identity
/// (zeroed output projections); gradient checking needs dense tensors so
/// every parameter carries signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    Training,
    Dense,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{context}: text tokenizes to no tokens")]
    EmptyText { context: String },
    #[error("{context}: {len} tokens exceed max_positions {max} (enable truncation to clip)")]
    TooLong {
        context: String,
        len: usize,
        max: usize,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

/// A sample after tokenization and graph construction, ready for the model.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: String,
    pub graph: HeteroGraph,
    /// Encoder input ids per node, in node id order.
    pub node_ids: Vec<Vec<u32>>,
    /// Content ids of the gold answer (no BOS/EOS); empty when unavailable.
    pub answer_ids: Vec<u32>,
}

/// Everything a training step needs from one sample's forward pass.
pub struct SampleForward {
    /// Teacher-forced logits, one row per target position.
    pub logits: Var,
    /// Target ids (answer then EOS), aligned with `logits` rows.
    pub targets: Vec<u32>,
    /// Node-score head output, one row per graph node.
    pub node_scores: Var,
    pub final_states: Var,
}

/// Frozen per-sample encodings for generation.
pub struct SampleContext {
    pub q_hidden: Matrix,
    pub q_mask: Vec<bool>,
    /// Final graph states of MIS nodes (question excluded); `None` when the
    /// sample has no MIS.
    pub mis_states: Option<Matrix>,
}

pub struct HeteroQaModel {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl HeteroQaModel {
    pub fn new(config: ModelConfig, seed: u64, init: ParamInit) -> Self {
        assert!(config.vocab_size > 0, "vocab_size must be set");
        let mut store = ParamStore::new();
        encoder::register_params(&mut store, &config.encoder_config(), config.vocab_size, seed);
        let out_init = match init {
            ParamInit::Training => Init::Zeros,
            ParamInit::Dense => Init::Normal { scale: 0.02 },
        };
        qgt::register_all_layers(&mut store, &config.qgt_config(), config.layer_kind(), seed, out_init);
        qgt::register_score_head(&mut store, config.d_model, seed);
        decoder::register_params(&mut store, &config.decoder_config(), config.vocab_size, seed);
        HeteroQaModel { config, store }
    }

    /// Rebuilds a model around parameters loaded from a checkpoint.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Self {
        HeteroQaModel { config, store }
    }

    /// Tokenizes a sample's node texts and answer, builds its graph, and
    /// validates lengths. `truncate` clips over-long texts at the head
    /// instead of rejecting them.
    pub fn prepare(
        &self,
        sample: &TrainingSample,
        vocab: &Vocabulary,
        mode: TokenizerMode,
        graph_cfg: &GraphConfig,
        truncate: bool,
    ) -> Result<PreparedSample, ModelError> {
        let graph = build_graph_with(sample, graph_cfg);
        let max = self.config.max_positions;
        let mut node_ids = Vec::with_capacity(graph.n_nodes());
        for node in &graph.nodes {
            let context = format!("sample {:?} node {} ({})", sample.id, node.id, node.ntype);
            let mut ids = vocab.encode_ids(&tokenize(&node.text, mode), false);
            if ids.is_empty() {
                return Err(ModelError::EmptyText { context });
            }
            if ids.len() > max {
                if truncate {
                    ids.truncate(max);
                } else {
                    return Err(ModelError::TooLong {
                        context,
                        len: ids.len(),
                        max,
                    });
                }
            }
            node_ids.push(ids);
        }
        // prefix holds BOS plus the answer, so one position is reserved
        let mut answer_ids = vocab.encode_ids(&tokenize(&sample.answer, mode), false);
        if answer_ids.len() > max - 1 {
            if truncate {
                answer_ids.truncate(max - 1);
            } else {
                return Err(ModelError::TooLong {
                    context: format!("sample {:?} answer", sample.id),
                    len: answer_ids.len(),
                    max: max - 1,
                });
            }
        }
        Ok(PreparedSample {
            id: sample.id.clone(),
            graph,
            node_ids,
            answer_ids,
        })
    }

    /// Runs encoder, graph layers, and score head on the tape; returns the
    /// question encoding and final states alongside the MIS rows.
    fn encode_graph(
        &self,
        tape: &Tape,
        tp: &TapedParams,
        prepared: &PreparedSample,
    ) -> Result<(QuestionEncoding, Var, Var, Option<Var>), ModelError> {
        let (states0, q_enc) = encoder::init_graph_states(
            tape,
            tp,
            &self.config.encoder_config(),
            &prepared.graph,
            &prepared.node_ids,
        )?;
        let (final_states, _) = qgt::forward(
            tape,
            tp,
            &self.config.qgt_config(),
            &prepared.graph,
            states0,
            self.config.layer_kind(),
        );
        let node_scores = qgt::predict_node_scores(tape, tp, final_states);
        let mis = prepared.graph.mis_nodes();
        let mis_states = if mis.is_empty() {
            None
        } else {
            Some(tape.gather_rows(final_states, &mis))
        };
        Ok((q_enc, final_states, node_scores, mis_states))
    }

    /// Teacher-forced forward pass for training and loss computation.
    pub fn forward_training(
        &self,
        tape: &Tape,
        tp: &TapedParams,
        prepared: &PreparedSample,
    ) -> Result<SampleForward, ModelError> {
        let (q_enc, final_states, node_scores, mis_states) =
            self.encode_graph(tape, tp, prepared)?;
        let mut prefix = Vec::with_capacity(prepared.answer_ids.len() + 1);
        prefix.push(BOS_ID);
        prefix.extend_from_slice(&prepared.answer_ids);
        let mut targets = prepared.answer_ids.clone();
        targets.push(EOS_ID);
        let logits = decoder::forward(
            tape,
            tp,
            &self.config.decoder_config(),
            &prefix,
            &q_enc,
            mis_states,
            None,
        )?;
        Ok(SampleForward {
            logits,
            targets,
            node_scores,
            final_states,
        })
    }

    /// Freezes the question encoding and final MIS states for generation.
    pub fn sample_context(&self, prepared: &PreparedSample) -> Result<SampleContext, ModelError> {
        let tape = Tape::new();
        let tp = TapedParams::new(&tape, &self.store);
        let (q_enc, _, _, mis_states) = self.encode_graph(&tape, &tp, prepared)?;
        Ok(SampleContext {
            q_hidden: tape.value(q_enc.hidden),
            q_mask: q_enc.mask,
            mis_states: mis_states.map(|v| tape.value(v)),
        })
    }

    /// Last-position logits for a decoding prefix against a frozen context.
    pub fn decode_step(&self, ctx: &SampleContext, prefix: &[u32]) -> Vec<f64> {
        let tape = Tape::new();
        let tp = TapedParams::new(&tape, &self.store);
        let q = QuestionEncoding {
            hidden: tape.leaf(ctx.q_hidden.clone()),
            mask: ctx.q_mask.clone(),
        };
        let nodes = ctx.mis_states.as_ref().map(|m| tape.leaf(m.clone()));
        let logits = decoder::forward(
            &tape,
            &tp,
            &self.config.decoder_config(),
            prefix,
            &q,
            nodes,
            None,
        )
        .expect("prefix built by generation loop is valid");
        let v = tape.value(logits);
        v.row(v.nrows() - 1).iter().copied().collect()
    }

    /// Generates answer ids for a prepared sample.
    pub fn generate(
        &self,
        prepared: &PreparedSample,
        gen: &GenerationConfig,
    ) -> Result<Vec<u32>, ModelError> {
        let ctx = self.sample_context(prepared)?;
        Ok(decoder::generate(gen, |prefix| self.decode_step(&ctx, prefix)))
    }
}
