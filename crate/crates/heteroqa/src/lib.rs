//! HeteroQA: answer generation for community question answering grounded in
//! multiple information sources (MIS).
//!
//! The pipeline retrieves typed evidence with BM25 (user articles with their
//! comments, related question/answer pairs), builds a heterogeneous graph over
//! the retrieved sources, runs a question-aware graph transformer to extract
//! question-relevant knowledge, and generates the answer with a decoder that
//! fuses question cross-attention and graph attention. Training combines the
//! generation cross-entropy with a BM25-score regression on graph nodes.
//!
//! Modules map onto the pipeline stages:
//! - [`textprep`]: tokenization, vocabulary, id encoding
//! - [`retrieval`]: in-memory BM25 index, MIS assembly
//! - [`dataset`]: sample schema, JSONL i/o, statistics, synthetic fixtures
//! - [`graph`]: heterogeneous MIS graph construction
//! - [`autodiff`]: tape-based reverse-mode differentiation over f64 matrices
//! - [`encoder`]: token-level transformer encoder and node initialization
//! - [`qgt`]: question-aware graph transformer layers and the score head
//! - [`decoder`]: fusion decoder and greedy/beam generation
//! - [`model`]: parameter registry and end-to-end forward pass
//! - [`training`]: losses, optimizer loop, ablations, gradient checking
//! - [`evaluation`]: BLEU / ROUGE-L / METEOR-lite and the Retrieved1 baseline
//! - [`checkpoint`], [`config`], [`pipeline`]: operational glue for the CLI

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod qgt;
pub mod retrieval;
pub mod textprep;
pub mod training;
