//! Run configuration: a single structured text file with flat dotted keys
//! (`qgt.layers=2`), overridable by command-line `--set key=value` flags and
//! the `HETEROQA_SEED` environment variable. Unknown keys are rejected and
//! every field has a documented default.

use crate::decoder::{GenerationConfig, GenerationMode, GraphAttnPlacement};
use crate::graph::{GraphConfig, MisDrops};
use crate::model::{Ablation, ModelConfig};
use crate::nn::fnv1a;
use crate::retrieval::MisCaps;
use crate::textprep::TokenizerMode;
use crate::training::TrainConfig;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {message}")]
    BadValue { key: String, message: String },
}

/// Every tunable of the pipeline, with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // data
    pub data_mode: TokenizerMode,
    pub data_truncate: bool,
    // vocabulary
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
    // retrieval
    pub retrieval_k1: f64,
    pub retrieval_b: f64,
    pub cap_articles: usize,
    pub cap_related_qa: usize,
    pub msmplus_k: usize,
    // graph
    pub reverse_edges: bool,
    pub drop_articles: bool,
    pub drop_comments: bool,
    pub drop_related_qa: bool,
    // model dims
    pub d_model: usize,
    pub ffn_mult: usize,
    pub max_positions: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub qgt_layers: usize,
    pub qgt_heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub graph_attn_layers: GraphAttnPlacement,
    pub beta_sigmoid: bool,
    // training
    pub ablation: Ablation,
    pub psi: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    // generation
    pub gen_mode: GenerationMode,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_mode: TokenizerMode::Word,
            data_truncate: false,
            vocab_min_freq: 1,
            vocab_max_size: 32_000,
            retrieval_k1: 1.2,
            retrieval_b: 0.75,
            // desk-scale caps; corpus-scale runs raise these to 30 / 9
            cap_articles: 3,
            cap_related_qa: 3,
            msmplus_k: 3,
            reverse_edges: true,
            drop_articles: false,
            drop_comments: false,
            drop_related_qa: false,
            d_model: 64,
            ffn_mult: 2,
            max_positions: 128,
            encoder_layers: 2,
            encoder_heads: 4,
            qgt_layers: 2,
            qgt_heads: 2,
            decoder_layers: 2,
            decoder_heads: 4,
            graph_attn_layers: GraphAttnPlacement::All,
            beta_sigmoid: false,
            ablation: Ablation::Full,
            psi: 0.01,
            learning_rate: 1e-3,
            steps: 200,
            batch_size: 8,
            seed: 0,
            gen_mode: GenerationMode::Greedy,
            beam_width: 4,
            max_len: 32,
            length_norm: 1.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: format!("{e} (value {value:?})"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            message: format!("expected true|false, got {other:?}"),
        }),
    }
}

impl RunConfig {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "data.mode" => self.data_mode = parse(key, value)?,
            "data.truncate" => self.data_truncate = parse_bool(key, value)?,
            "vocab.min_freq" => self.vocab_min_freq = parse(key, value)?,
            "vocab.max_size" => self.vocab_max_size = parse(key, value)?,
            "retrieval.k1" => self.retrieval_k1 = parse(key, value)?,
            "retrieval.b" => self.retrieval_b = parse(key, value)?,
            "retrieval.cap_articles" => self.cap_articles = parse(key, value)?,
            "retrieval.cap_related_qa" => self.cap_related_qa = parse(key, value)?,
            "retrieval.msmplus_k" => self.msmplus_k = parse(key, value)?,
            "graph.reverse_edges" => self.reverse_edges = parse_bool(key, value)?,
            "graph.drop_articles" => self.drop_articles = parse_bool(key, value)?,
            "graph.drop_comments" => self.drop_comments = parse_bool(key, value)?,
            "graph.drop_related_qa" => self.drop_related_qa = parse_bool(key, value)?,
            "model.d_model" => self.d_model = parse(key, value)?,
            "model.ffn_mult" => self.ffn_mult = parse(key, value)?,
            "model.max_positions" => self.max_positions = parse(key, value)?,
            "model.encoder_layers" => self.encoder_layers = parse(key, value)?,
            "model.encoder_heads" => self.encoder_heads = parse(key, value)?,
            "model.qgt_layers" => self.qgt_layers = parse(key, value)?,
            "model.qgt_heads" => self.qgt_heads = parse(key, value)?,
            "model.decoder_layers" => self.decoder_layers = parse(key, value)?,
            "model.decoder_heads" => self.decoder_heads = parse(key, value)?,
            "model.graph_attn_layers" => self.graph_attn_layers = parse(key, value)?,
            "model.beta_sigmoid" => self.beta_sigmoid = parse_bool(key, value)?,
            "train.ablation" => self.ablation = parse(key, value)?,
            "train.psi" => self.psi = parse(key, value)?,
            "train.lr" => self.learning_rate = parse(key, value)?,
            "train.steps" => self.steps = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "generate.mode" => self.gen_mode = parse(key, value)?,
            "generate.beam_width" => self.beam_width = parse(key, value)?,
            "generate.max_len" => self.max_len = parse(key, value)?,
            "generate.length_norm" => self.length_norm = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a config file: `key=value` lines, `#` comments, blank lines.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies the `HETEROQA_SEED` override when present.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(seed) = std::env::var("HETEROQA_SEED") {
            self.seed = parse("HETEROQA_SEED", &seed)?;
        }
        Ok(())
    }

    /// Sorted `key=value` lines of the resolved configuration.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("data.mode".into(), self.data_mode.to_string()),
            ("data.truncate".into(), self.data_truncate.to_string()),
            ("vocab.min_freq".into(), self.vocab_min_freq.to_string()),
            ("vocab.max_size".into(), self.vocab_max_size.to_string()),
            ("retrieval.k1".into(), self.retrieval_k1.to_string()),
            ("retrieval.b".into(), self.retrieval_b.to_string()),
            ("retrieval.cap_articles".into(), self.cap_articles.to_string()),
            ("retrieval.cap_related_qa".into(), self.cap_related_qa.to_string()),
            ("retrieval.msmplus_k".into(), self.msmplus_k.to_string()),
            ("graph.reverse_edges".into(), self.reverse_edges.to_string()),
            ("graph.drop_articles".into(), self.drop_articles.to_string()),
            ("graph.drop_comments".into(), self.drop_comments.to_string()),
            ("graph.drop_related_qa".into(), self.drop_related_qa.to_string()),
            ("model.d_model".into(), self.d_model.to_string()),
            ("model.ffn_mult".into(), self.ffn_mult.to_string()),
            ("model.max_positions".into(), self.max_positions.to_string()),
            ("model.encoder_layers".into(), self.encoder_layers.to_string()),
            ("model.encoder_heads".into(), self.encoder_heads.to_string()),
            ("model.qgt_layers".into(), self.qgt_layers.to_string()),
            ("model.qgt_heads".into(), self.qgt_heads.to_string()),
            ("model.decoder_layers".into(), self.decoder_layers.to_string()),
            ("model.decoder_heads".into(), self.decoder_heads.to_string()),
            (
                "model.graph_attn_layers".into(),
                match self.graph_attn_layers {
                    GraphAttnPlacement::All => "all".into(),
                    GraphAttnPlacement::Last => "last".into(),
                },
            ),
            ("model.beta_sigmoid".into(), self.beta_sigmoid.to_string()),
            ("train.ablation".into(), self.ablation.to_string()),
            ("train.psi".into(), self.psi.to_string()),
            ("train.lr".into(), self.learning_rate.to_string()),
            ("train.steps".into(), self.steps.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            (
                "generate.mode".into(),
                match self.gen_mode {
                    GenerationMode::Greedy => "greedy".into(),
                    GenerationMode::Beam => "beam".into(),
                },
            ),
            ("generate.beam_width".into(), self.beam_width.to_string()),
            ("generate.max_len".into(), self.max_len.to_string()),
            ("generate.length_norm".into(), self.length_norm.to_string()),
        ];
        rows.sort();
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            max_positions: self.max_positions,
            ffn_mult: self.ffn_mult,
            encoder_layers: self.encoder_layers,
            encoder_heads: self.encoder_heads,
            qgt_layers: self.qgt_layers,
            qgt_heads: self.qgt_heads,
            decoder_layers: self.decoder_layers,
            decoder_heads: self.decoder_heads,
            graph_attn: self.graph_attn_layers,
            beta_sigmoid: self.beta_sigmoid,
            ablation: self.ablation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            psi: self.psi,
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            reverse_edges: self.reverse_edges,
            drops: MisDrops {
                articles: self.drop_articles,
                comments: self.drop_comments,
                related_qa: self.drop_related_qa,
            },
            cap_articles: Some(self.cap_articles),
            cap_related_qa: Some(self.cap_related_qa),
        }
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            mode: self.gen_mode,
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_norm: self.length_norm,
        }
    }

    pub fn mis_caps(&self) -> MisCaps {
        MisCaps {
            articles: self.cap_articles,
            related_qa: self.cap_related_qa,
        }
    }

    /// Hash over the keys that fix parameter shapes and wiring; a checkpoint
    /// carries it so generation cannot silently run a different model.
    pub fn model_hash(&self, vocab_size: usize) -> u64 {
        let canon = format!(
            "vocab={} d={} ffn={} pos={} enc={}x{} qgt={}x{} dec={}x{} gattn={:?} sig={} ablation={}",
            vocab_size,
            self.d_model,
            self.ffn_mult,
            self.max_positions,
            self.encoder_layers,
            self.encoder_heads,
            self.qgt_layers,
            self.qgt_heads,
            self.decoder_layers,
            self.decoder_heads,
            self.graph_attn_layers,
            self.beta_sigmoid,
            self.ablation,
        );
        fnv1a(canon.as_bytes())
    }
}
