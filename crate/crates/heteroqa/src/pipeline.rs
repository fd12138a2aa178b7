//! Command implementations behind the CLI. Each command returns a typed
//! error that maps onto the process exit codes: 1 usage, 2 data validation,
//! 3 numerical failure.

use crate::checkpoint;
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    self, load_articles_jsonl, load_jsonl, load_qa_jsonl, save_jsonl, ArticleDoc, QaDoc,
    TrainingSample,
};
use crate::evaluation::{self, MetricReport};
use crate::model::{HeteroQaModel, ParamInit, PreparedSample};
use crate::retrieval::{assemble_mis, build_msmplus, Bm25Index, Document};
use crate::textprep::{tokenize, TokenSequence, Vocabulary};
use crate::training::{self, GradCheckReport, TrainingError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Usage(e.to_string())
    }
}

impl From<dataset::DatasetError> for PipelineError {
    fn from(e: dataset::DatasetError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::retrieval::RetrievalError> for PipelineError {
    fn from(e: crate::retrieval::RetrievalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::model::ModelError> for PipelineError {
    fn from(e: crate::model::ModelError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TrainingError> for PipelineError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::NonFiniteLoss { .. } => PipelineError::Numeric(e.to_string()),
            TrainingError::Model(inner) => PipelineError::Data(inner.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<crate::evaluation::EvalError> for PipelineError {
    fn from(e: crate::evaluation::EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for PipelineError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::textprep::TextPrepError> for PipelineError {
    fn from(e: crate::textprep::TextPrepError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

/// Prediction record emitted by `generate` and consumed by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
}

/// Writes the three fixture corpora (`samples.jsonl`, `articles.jsonl`,
/// `qa.jsonl`) into `out_dir`.
pub fn cmd_fixture(
    cfg: &RunConfig,
    n_samples: usize,
    vocab_words: usize,
    out_dir: &Path,
) -> Result<(), PipelineError> {
    if n_samples == 0 {
        return Err(PipelineError::Usage("fixture needs n_samples >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let fixture = dataset::make_fixture(cfg.seed, n_samples, vocab_words);
    save_jsonl(&fixture.samples, &out_dir.join("samples.jsonl"))?;
    dataset::save_articles_jsonl(&fixture.articles, &out_dir.join("articles.jsonl"))?;
    dataset::save_qa_jsonl(&fixture.qa_pairs, &out_dir.join("qa.jsonl"))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Articles,
    Qa,
}

impl std::str::FromStr for IndexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "articles" => Ok(IndexKind::Articles),
            "qa" => Ok(IndexKind::Qa),
            other => Err(format!("unknown index kind {other:?} (expected articles|qa)")),
        }
    }
}

fn build_article_index(cfg: &RunConfig, docs: &[ArticleDoc]) -> Result<Bm25Index, PipelineError> {
    Ok(Bm25Index::build(
        docs.iter().map(Document::from_article).collect(),
        cfg.data_mode,
        cfg.retrieval_k1,
        cfg.retrieval_b,
    )?)
}

fn build_qa_index(cfg: &RunConfig, docs: &[QaDoc]) -> Result<Bm25Index, PipelineError> {
    Ok(Bm25Index::build(
        docs.iter().map(Document::from_qa).collect(),
        cfg.data_mode,
        cfg.retrieval_k1,
        cfg.retrieval_b,
    )?)
}

/// Builds a BM25 index from a corpus file and serializes it.
pub fn cmd_build_index(
    cfg: &RunConfig,
    input: &Path,
    kind: IndexKind,
    out: &Path,
) -> Result<String, PipelineError> {
    let index = match kind {
        IndexKind::Articles => build_article_index(cfg, &load_articles_jsonl(input)?)?,
        IndexKind::Qa => build_qa_index(cfg, &load_qa_jsonl(input)?)?,
    };
    index.save(out)?;
    Ok(format!(
        "indexed {} documents (avgdl {:.4}) -> {}",
        index.len(),
        index.avgdl(),
        out.display()
    ))
}

/// Attaches MIS bundles to samples. With article and/or QA corpora the
/// bundles come from BM25 retrieval against those corpora; with neither,
/// every sample gains related QA pairs retrieved from the samples' own
/// question/answer pairs (the MSM-plus construction).
pub fn cmd_build_dataset(
    cfg: &RunConfig,
    samples_path: &Path,
    articles_path: Option<&Path>,
    qa_path: Option<&Path>,
    out: &Path,
) -> Result<String, PipelineError> {
    let samples = load_jsonl(samples_path, true)?;
    let described;
    let built: Vec<TrainingSample> = if articles_path.is_none() && qa_path.is_none() {
        described = format!("msm-plus self-retrieval, k={}", cfg.msmplus_k);
        build_msmplus(&samples, cfg.msmplus_k, cfg.data_mode)?
    } else {
        described = "corpus retrieval".to_string();
        let empty = Bm25Index::build(vec![], cfg.data_mode, cfg.retrieval_k1, cfg.retrieval_b)?;
        let article_index = match articles_path {
            Some(p) => build_article_index(cfg, &load_articles_jsonl(p)?)?,
            None => empty.clone(),
        };
        let qa_index = match qa_path {
            Some(p) => build_qa_index(cfg, &load_qa_jsonl(p)?)?,
            None => empty,
        };
        samples
            .into_iter()
            .map(|mut s| {
                s.mis = assemble_mis(&s.question, &article_index, &qa_index, cfg.mis_caps(), &s.id);
                s
            })
            .collect()
    };
    save_jsonl(&built, out)?;
    Ok(format!(
        "wrote {} samples ({described}) -> {}",
        built.len(),
        out.display()
    ))
}

/// Table-2-style statistics of a dataset file.
pub fn cmd_stats(cfg: &RunConfig, data: &Path) -> Result<String, PipelineError> {
    let samples = load_jsonl(data, false)?;
    let stats = dataset::compute_stats(&samples, cfg.data_mode)?;
    Ok(stats.render())
}

/// Every text a dataset contributes to the vocabulary.
pub fn vocab_corpus(samples: &[TrainingSample], mode: crate::textprep::TokenizerMode) -> Vec<TokenSequence> {
    let mut seqs = Vec::new();
    for s in samples {
        seqs.push(tokenize(&s.question, mode));
        seqs.push(tokenize(&s.answer, mode));
        for a in &s.mis.articles {
            seqs.push(tokenize(&a.text, mode));
            for c in &a.comments {
                seqs.push(tokenize(&c.text, mode));
            }
        }
        for qa in &s.mis.related_qa {
            seqs.push(tokenize(&qa.question, mode));
            seqs.push(tokenize(&qa.answer, mode));
        }
    }
    seqs
}

fn prepare_all(
    model: &HeteroQaModel,
    samples: &[TrainingSample],
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<Vec<PreparedSample>, PipelineError> {
    samples
        .iter()
        .map(|s| {
            model
                .prepare(s, vocab, cfg.data_mode, &cfg.graph_config(), cfg.data_truncate)
                .map_err(PipelineError::from)
        })
        .collect()
}

pub struct TrainOutcome {
    pub summary: String,
    pub final_loss: Option<training::LossBreakdown>,
}

/// Trains from scratch on a dataset file; writes the checkpoint, the
/// vocabulary (one token per line), and the per-step metrics CSV.
pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    checkpoint_out: &Path,
    vocab_out: &Path,
    metrics_out: &Path,
) -> Result<TrainOutcome, PipelineError> {
    let samples = load_jsonl(data, true)?;
    if samples.is_empty() {
        return Err(PipelineError::Data(format!(
            "{}: dataset is empty",
            data.display()
        )));
    }
    let vocab = Vocabulary::build(&vocab_corpus(&samples, cfg.data_mode), cfg.vocab_min_freq, cfg.vocab_max_size)?;
    vocab.save(vocab_out)?;
    let mut model = HeteroQaModel::new(
        cfg.model_config(vocab.size()),
        cfg.seed,
        ParamInit::Training,
    );
    let prepared = prepare_all(&model, &samples, &vocab, cfg)?;
    let log = training::train(&mut model, &prepared, &cfg.train_config())?;
    std::fs::write(metrics_out, log.to_csv()).map_err(|e| io_err(metrics_out, e))?;
    checkpoint::save(&model.store, cfg.model_hash(vocab.size()), checkpoint_out)?;
    let final_loss = log.rows.last().map(|r| r.breakdown);
    let summary = match final_loss {
        Some(b) => format!(
            "trained {} steps on {} samples; final L={:.6} L_e={:.6} L_q={:.6}",
            log.rows.len(),
            samples.len(),
            b.l,
            b.l_e,
            b.l_q
        ),
        None => "trained 0 steps (checkpoint equals initialization)".to_string(),
    };
    Ok(TrainOutcome {
        summary,
        final_loss,
    })
}

/// Generates answers for every sample in a dataset file.
pub fn cmd_generate(
    cfg: &RunConfig,
    data: &Path,
    checkpoint_path: &Path,
    vocab_path: &Path,
    out: &Path,
) -> Result<String, PipelineError> {
    let samples = load_jsonl(data, false)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let store = checkpoint::load_validated(checkpoint_path, cfg.model_hash(vocab.size()))?;
    let model = HeteroQaModel::from_store(cfg.model_config(vocab.size()), store);
    let prepared = prepare_all(&model, &samples, &vocab, cfg)?;
    let gen_cfg = cfg.generation_config();
    let mut lines = String::new();
    for p in &prepared {
        let ids = model.generate(p, &gen_cfg)?;
        let answer = vocab.decode_to_text(&ids, cfg.data_mode);
        let record = Prediction {
            id: p.id.clone(),
            answer,
        };
        lines.push_str(&serde_json::to_string(&record).expect("prediction serializes"));
        lines.push('\n');
    }
    std::fs::write(out, lines).map_err(|e| io_err(out, e))?;
    Ok(format!("wrote {} predictions -> {}", prepared.len(), out.display()))
}

fn load_predictions(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Prediction = serde_json::from_str(line).map_err(|e| {
            PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push((record.id, record.answer));
    }
    Ok(out)
}

/// Scores predictions (or the Retrieved1 baseline) against gold answers.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    predictions_path: Option<&Path>,
    refs_path: &Path,
    retrieved1_baseline: bool,
    report_out: Option<&Path>,
) -> Result<MetricReport, PipelineError> {
    let refs_samples = load_jsonl(refs_path, true)?;
    let references: Vec<(String, String)> = refs_samples
        .iter()
        .map(|s| (s.id.clone(), s.answer.clone()))
        .collect();
    let predictions: Vec<(String, String)> = if retrieved1_baseline {
        refs_samples
            .iter()
            .map(|s| (s.id.clone(), evaluation::retrieved1(s)))
            .collect()
    } else {
        let path = predictions_path.ok_or_else(|| {
            PipelineError::Usage("evaluate needs --pred or --retrieved1".into())
        })?;
        load_predictions(path)?
    };
    let report = evaluation::evaluate_run(&predictions, &references, cfg.data_mode)?;
    if let Some(path) = report_out {
        std::fs::write(path, report.to_json()).map_err(|e| io_err(path, e))?;
    }
    Ok(report)
}

/// Finite-difference gradient verification on a tiny but complete sample
/// graph (all five node types, all eight edge types with reverses).
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, PipelineError> {
    let sample = TrainingSample {
        id: "gradcheck".into(),
        question: "alpha beta".into(),
        answer: "beta gamma".into(),
        mis: crate::dataset::MisBundle {
            articles: vec![crate::dataset::ArticleEntry {
                id: "art".into(),
                text: "alpha gamma delta".into(),
                score: 1.5,
                comments: vec![crate::dataset::CommentRec {
                    id: "com".into(),
                    text: "delta beta".into(),
                }],
            }],
            related_qa: vec![crate::dataset::RelatedQaEntry {
                id: "rqa".into(),
                question: "alpha delta".into(),
                answer: "gamma gamma".into(),
                score: 0.75,
            }],
        },
    };
    let vocab = Vocabulary::build(&vocab_corpus(std::slice::from_ref(&sample), cfg.data_mode), 1, cfg.vocab_max_size)?;
    let mut model = HeteroQaModel::new(cfg.model_config(vocab.size()), cfg.seed, ParamInit::Dense);
    let prepared = model.prepare(
        &sample,
        &vocab,
        cfg.data_mode,
        &cfg.graph_config(),
        cfg.data_truncate,
    )?;
    let report = training::gradcheck(&mut model, &prepared, cfg.psi, eps, tol)?;
    if !report.passed() {
        return Err(PipelineError::Numeric(format!(
            "gradient check failed; offending tensors: {:?}",
            report.failing_tensors()
        )));
    }
    Ok(report)
}

/// Convenience wrapper for tests and the end-to-end pipeline: fixture ->
/// build-dataset -> train -> generate -> evaluate inside one process.
pub struct PipelinePaths {
    pub dir: PathBuf,
}

impl PipelinePaths {
    pub fn new(dir: &Path) -> Self {
        PipelinePaths {
            dir: dir.to_path_buf(),
        }
    }

    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples.jsonl")
    }

    pub fn articles(&self) -> PathBuf {
        self.dir.join("articles.jsonl")
    }

    pub fn qa(&self) -> PathBuf {
        self.dir.join("qa.jsonl")
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}
