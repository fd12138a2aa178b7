//! Canonical sample schema, JSONL ingestion with per-line validation,
//! Table-2-style corpus statistics, and deterministic synthetic fixtures.

use crate::textprep::{tokenize, TokenizerMode};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("cannot compute statistics of an empty dataset")]
    Empty,
}

/// A comment attached to a user article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommentRec {
    pub id: String,
    pub text: String,
}

/// A retrieved user article with its comments and BM25 score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticleEntry {
    pub id: String,
    pub text: String,
    pub score: f64,
    #[serde(default)]
    pub comments: Vec<CommentRec>,
}

/// A retrieved related question/answer pair with its BM25 score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelatedQaEntry {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub score: f64,
}

/// The typed multiple-information-sources bundle of one sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisBundle {
    #[serde(default)]
    pub articles: Vec<ArticleEntry>,
    #[serde(default)]
    pub related_qa: Vec<RelatedQaEntry>,
}

impl MisBundle {
    pub fn is_empty(&self) -> bool {
        self.articles.is_empty() && self.related_qa.is_empty()
    }
}

/// One question/answer pair plus its typed MIS bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSample {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub mis: MisBundle,
}

/// Raw article document for index building (pre-retrieval, no score).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticleDoc {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub comments: Vec<CommentRec>,
}

/// Raw question/answer document for index building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaDoc {
    pub id: String,
    pub question: String,
    pub answer: String,
}

fn validate_sample(
    sample: &TrainingSample,
    line: usize,
    require_answer: bool,
) -> Result<(), DatasetError> {
    let fail = |message: String| DatasetError::Validation { line, message };
    if sample.question.trim().is_empty() {
        return Err(fail(format!("sample {:?}: empty question", sample.id)));
    }
    if require_answer && sample.answer.trim().is_empty() {
        return Err(fail(format!("sample {:?}: empty answer", sample.id)));
    }
    for a in &sample.mis.articles {
        if !a.score.is_finite() || a.score < 0.0 {
            return Err(fail(format!(
                "article {:?}: score {} is not finite and >= 0",
                a.id, a.score
            )));
        }
        if a.text.trim().is_empty() {
            return Err(fail(format!("article {:?}: empty text", a.id)));
        }
        for c in &a.comments {
            if c.text.trim().is_empty() {
                return Err(fail(format!("comment {:?}: empty text", c.id)));
            }
        }
    }
    for qa in &sample.mis.related_qa {
        if !qa.score.is_finite() || qa.score < 0.0 {
            return Err(fail(format!(
                "related QA {:?}: score {} is not finite and >= 0",
                qa.id, qa.score
            )));
        }
        if qa.question.trim().is_empty() || qa.answer.trim().is_empty() {
            return Err(fail(format!("related QA {:?}: empty question or answer", qa.id)));
        }
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| DatasetError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Loads and validates samples; one JSON object per line, errors carry the
/// 1-based line number. `require_answers` is off for test-split inputs.
pub fn load_jsonl(path: &Path, require_answers: bool) -> Result<Vec<TrainingSample>, DatasetError> {
    let rows: Vec<(usize, TrainingSample)> = read_jsonl(path)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, sample) in rows {
        validate_sample(&sample, line, require_answers)?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn save_jsonl(samples: &[TrainingSample], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_articles_jsonl(path: &Path) -> Result<Vec<ArticleDoc>, DatasetError> {
    let rows: Vec<(usize, ArticleDoc)> = read_jsonl(path)?;
    for (line, doc) in &rows {
        if doc.text.trim().is_empty() {
            return Err(DatasetError::Validation {
                line: *line,
                message: format!("article {:?}: empty text", doc.id),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, d)| d).collect())
}

pub fn load_qa_jsonl(path: &Path) -> Result<Vec<QaDoc>, DatasetError> {
    let rows: Vec<(usize, QaDoc)> = read_jsonl(path)?;
    for (line, doc) in &rows {
        if doc.question.trim().is_empty() || doc.answer.trim().is_empty() {
            return Err(DatasetError::Validation {
                line: *line,
                message: format!("QA pair {:?}: empty question or answer", doc.id),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, d)| d).collect())
}

pub fn save_articles_jsonl(docs: &[ArticleDoc], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("article serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_qa_jsonl(docs: &[QaDoc], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("QA pair serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Exact rational mean kept as (sum, count); rendering rounds to 2 decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mean {
    pub sum: u64,
    pub count: u64,
}

impl Mean {
    fn push(&mut self, v: u64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn value(&self) -> Option<f64> {
        if self.count == 0 {
            None
        } else {
            Some(self.sum as f64 / self.count as f64)
        }
    }
}

impl fmt::Display for Mean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:.2}"),
            None => write!(f, "-"),
        }
    }
}

/// Table-2-style statistics for one split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub question_words: Mean,
    pub answer_words: Mean,
    pub articles_per_sample: Mean,
    pub sentences_per_article: Mean,
    pub article_words: Mean,
    pub comments_per_sample: Mean,
    pub comment_words: Mean,
    pub related_qa_per_sample: Mean,
}

const SENTENCE_TERMINATORS: [char; 6] = ['。', '！', '？', '.', '!', '?'];

/// Number of sentences: non-blank segments after splitting on the fixed
/// terminator set.
pub fn count_sentences(text: &str) -> usize {
    text.split(SENTENCE_TERMINATORS)
        .filter(|seg| !seg.trim().is_empty())
        .count()
}

/// Computes per-split statistics using the dataset's tokenizer mode.
pub fn compute_stats(
    samples: &[TrainingSample],
    mode: TokenizerMode,
) -> Result<DatasetStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let words = |text: &str| tokenize(text, mode).len() as u64;
    let mut stats = DatasetStats {
        n_samples: samples.len(),
        ..DatasetStats::default()
    };
    for s in samples {
        stats.question_words.push(words(&s.question));
        stats.answer_words.push(words(&s.answer));
        stats.articles_per_sample.push(s.mis.articles.len() as u64);
        stats
            .related_qa_per_sample
            .push(s.mis.related_qa.len() as u64);
        let mut comment_count = 0u64;
        for a in &s.mis.articles {
            stats.article_words.push(words(&a.text));
            stats
                .sentences_per_article
                .push(count_sentences(&a.text) as u64);
            comment_count += a.comments.len() as u64;
            for c in &a.comments {
                stats.comment_words.push(words(&c.text));
            }
        }
        stats.comments_per_sample.push(comment_count);
    }
    Ok(stats)
}

impl DatasetStats {
    /// Renders a two-column table matching the usual dataset-statistics rows.
    pub fn render(&self) -> String {
        let rows = [
            ("# of samples".to_string(), self.n_samples.to_string()),
            ("Avg. words of question".into(), self.question_words.to_string()),
            ("Avg. words of answer".into(), self.answer_words.to_string()),
            ("Avg. number of articles".into(), self.articles_per_sample.to_string()),
            ("Avg. sentences of articles".into(), self.sentences_per_article.to_string()),
            ("Avg. words of articles".into(), self.article_words.to_string()),
            ("Avg. number of comments".into(), self.comments_per_sample.to_string()),
            ("Avg. words of comments".into(), self.comment_words.to_string()),
            ("Avg. number of related QA".into(), self.related_qa_per_sample.to_string()),
        ];
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let pad = width - k.chars().count();
            out.push_str(&k);
            out.extend(std::iter::repeat_n(' ', pad + 2));
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// A deterministic synthetic corpus. Each question shares one rare marker
/// with exactly one article and one with exactly one QA pair, so retrieval is
/// verifiable; each answer is a function of the matched article's payload
/// token, so overfitting is achievable.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub samples: Vec<TrainingSample>,
    pub articles: Vec<ArticleDoc>,
    pub qa_pairs: Vec<QaDoc>,
}

impl Fixture {
    /// The payload token planted in sample `i`'s article and answer.
    pub fn payload_token(i: usize) -> String {
        format!("zpay{i:04}")
    }

    pub fn article_marker(i: usize) -> String {
        format!("zqart{i:04}")
    }

    pub fn qa_marker(i: usize) -> String {
        format!("zqqa{i:04}")
    }
}

/// Generates the synthetic fixture. Same seed, same output, byte for byte.
///
/// Filler words come from disjoint per-role pools (questions, articles,
/// comments, related questions, related answers), so the planted markers are
/// the only terms a question shares with any document. Retrieval over the
/// fixture therefore ranks the planted article and QA pair first.
pub fn make_fixture(seed: u64, n_samples: usize, vocab_size: usize) -> Fixture {
    assert!(n_samples >= 1, "n_samples must be >= 1");
    let pool = vocab_size.max(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = Vec::with_capacity(n_samples);
    let mut articles = Vec::with_capacity(n_samples);
    let mut qa_pairs = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let fill = |prefix: char, rng: &mut ChaCha8Rng, n: usize| {
            (0..n)
                .map(|_| format!("{prefix}{:03}", rng.gen_range(0..pool)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let art_marker = Fixture::article_marker(i);
        let qa_marker = Fixture::qa_marker(i);
        let payload = Fixture::payload_token(i);

        let question = format!(
            "{} {} {} {}",
            fill('q', &mut rng, 2),
            art_marker,
            qa_marker,
            fill('q', &mut rng, 1)
        );
        let answer = format!("use {payload} now");

        let n_sents = rng.gen_range(1..=2);
        let body: Vec<String> = (0..n_sents)
            .map(|_| format!("{} .", fill('a', &mut rng, 3)))
            .collect();
        let text = format!("{art_marker} {payload} {}", body.join(" "));
        let n_comments = rng.gen_range(1..=2);
        let comments = (0..n_comments)
            .map(|c| CommentRec {
                id: format!("c{i:04}-{c}"),
                text: fill('c', &mut rng, 3),
            })
            .collect();
        articles.push(ArticleDoc {
            id: format!("art{i:04}"),
            text,
            comments,
        });

        qa_pairs.push(QaDoc {
            id: format!("qa{i:04}"),
            question: format!("{} {qa_marker}", fill('r', &mut rng, 2)),
            answer: format!("{} {payload}", fill('s', &mut rng, 2)),
        });

        samples.push(TrainingSample {
            id: format!("s{i:04}"),
            question,
            answer,
            mis: MisBundle::default(),
        });
    }
    Fixture {
        samples,
        articles,
        qa_pairs,
    }
}
