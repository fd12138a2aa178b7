//! In-memory BM25 index over articles and QA pairs, MIS bundle assembly, and
//! MSM-plus-style dataset construction.
//!
//! Scoring uses the non-negative idf variant
//! `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` so retrieval scores can
//! double as regression targets. QA documents index the concatenated
//! question and answer text, since the question is used as the query to
//! retrieve whole related pairs.

use crate::dataset::{
    ArticleDoc, ArticleEntry, MisBundle, QaDoc, RelatedQaEntry, TrainingSample,
};
use crate::textprep::{tokenize, TokenSequence, TokenizerMode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
/// Full-scale caps follow the corpus averages (about 30 articles and 9
/// related QA per sample); desk-scale runs override these to small values.
pub const DEFAULT_CAP_ARTICLES: usize = 30;
pub const DEFAULT_CAP_RELATED_QA: usize = 9;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("unknown document id {0:?}")]
    UnknownDocId(String),
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

/// Stored payload of an indexed document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DocPayload {
    /// Plain text document, nothing attached.
    Plain,
    /// User article carrying its comments.
    Article { comments: Vec<(String, String)> },
    /// Question/answer pair.
    Qa { question: String, answer: String },
}

/// Document to be indexed.
#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub payload: DocPayload,
}

impl Document {
    pub fn plain(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            payload: DocPayload::Plain,
        }
    }

    pub fn from_article(doc: &ArticleDoc) -> Self {
        Document {
            id: doc.id.clone(),
            text: doc.text.clone(),
            payload: DocPayload::Article {
                comments: doc
                    .comments
                    .iter()
                    .map(|c| (c.id.clone(), c.text.clone()))
                    .collect(),
            },
        }
    }

    /// Indexes the concatenated question and answer; the payload keeps the
    /// parts separate.
    pub fn from_qa(doc: &QaDoc) -> Self {
        Document {
            id: doc.id.clone(),
            text: format!("{} {}", doc.question, doc.answer),
            payload: DocPayload::Qa {
                question: doc.question.clone(),
                answer: doc.answer.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredDoc {
    id: String,
    len: u64,
    text: String,
    payload: DocPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable in-memory BM25 inverted index.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    mode: TokenizerMode,
    docs: Vec<StoredDoc>,
    id_to_pos: BTreeMap<String, usize>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_len: u64,
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
}

/// Per-type maximum counts for an assembled MIS bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MisCaps {
    pub articles: usize,
    pub related_qa: usize,
}

impl Default for MisCaps {
    fn default() -> Self {
        MisCaps {
            articles: DEFAULT_CAP_ARTICLES,
            related_qa: DEFAULT_CAP_RELATED_QA,
        }
    }
}

impl Bm25Index {
    /// Builds an index with the given BM25 parameters. Duplicate ids are
    /// rejected by name.
    pub fn build(
        docs: Vec<Document>,
        mode: TokenizerMode,
        k1: f64,
        b: f64,
    ) -> Result<Bm25Index, RetrievalError> {
        let mut index = Bm25Index {
            k1,
            b,
            mode,
            docs: Vec::with_capacity(docs.len()),
            id_to_pos: BTreeMap::new(),
            postings: BTreeMap::new(),
            total_len: 0,
        };
        for doc in docs {
            if index.id_to_pos.contains_key(&doc.id) {
                return Err(RetrievalError::DuplicateDocId(doc.id));
            }
            let tokens = tokenize(&doc.text, mode);
            let pos = index.docs.len();
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &tokens.tokens {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                index
                    .postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting {
                        doc: pos as u32,
                        tf: count,
                    });
            }
            index.total_len += tokens.len() as u64;
            index.id_to_pos.insert(doc.id.clone(), pos);
            index.docs.push(StoredDoc {
                id: doc.id,
                len: tokens.len() as u64,
                text: doc.text,
                payload: doc.payload,
            });
        }
        Ok(index)
    }

    pub fn build_default(docs: Vec<Document>, mode: TokenizerMode) -> Result<Bm25Index, RetrievalError> {
        Self::build(docs, mode, DEFAULT_K1, DEFAULT_B)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u64> {
        self.id_to_pos.get(doc_id).map(|&p| self.docs[p].len)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn payload(&self, doc_id: &str) -> Option<&DocPayload> {
        self.id_to_pos.get(doc_id).map(|&p| &self.docs[p].payload)
    }

    pub fn doc_text(&self, doc_id: &str) -> Option<&str> {
        self.id_to_pos.get(doc_id).map(|&p| self.docs[p].text.as_str())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        (1.0 + (n - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
    }

    fn term_score(&self, tf: u32, df: usize, dl: u64) -> f64 {
        let tf = tf as f64;
        let dl = dl as f64;
        let norm = tf + self.k1 * (1.0 - self.b + self.b * dl / self.avgdl());
        self.idf(df) * tf * (self.k1 + 1.0) / norm
    }

    /// BM25 score of one document for a query. Query tokens are summed as
    /// given, repeated terms contribute once per occurrence.
    pub fn score(&self, query: &TokenSequence, doc_id: &str) -> Result<f64, RetrievalError> {
        let &pos = self
            .id_to_pos
            .get(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDocId(doc_id.to_string()))?;
        let dl = self.docs[pos].len;
        let mut total = 0.0;
        for term in &query.tokens {
            let Some(postings) = self.postings.get(term.as_str()) else {
                continue;
            };
            let Some(p) = postings.iter().find(|p| p.doc as usize == pos) else {
                continue;
            };
            total += self.term_score(p.tf, postings.len(), dl);
        }
        Ok(total)
    }

    /// Top-k hits ordered by (score desc, doc id asc). Documents matching no
    /// query term are omitted; `exclude` ids are never returned.
    pub fn retrieve(
        &self,
        query: &TokenSequence,
        k: usize,
        exclude: &[&str],
    ) -> Vec<RetrievalHit> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &query.tokens {
            let Some(postings) = self.postings.get(term.as_str()) else {
                continue;
            };
            let df = postings.len();
            for p in postings {
                let dl = self.docs[p.doc as usize].len;
                *acc.entry(p.doc as usize).or_insert(0.0) += self.term_score(p.tf, df, dl);
            }
        }
        let mut hits: Vec<RetrievalHit> = acc
            .into_iter()
            .filter(|&(pos, score)| score > 0.0 && !exclude.contains(&self.docs[pos].id.as_str()))
            .map(|(pos, score)| RetrievalHit {
                doc_id: self.docs[pos].id.clone(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(k);
        hits
    }

    /// Serializes to a single file: header (N, avgdl, k1, b), postings in
    /// term-lexicographic order, then the stored document table. Round-trips
    /// bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut w: Vec<u8> = Vec::new();
        w.extend_from_slice(b"HQIX");
        w.extend_from_slice(&1u32.to_le_bytes());
        w.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        w.extend_from_slice(&self.avgdl().to_le_bytes());
        w.extend_from_slice(&self.k1.to_le_bytes());
        w.extend_from_slice(&self.b.to_le_bytes());
        w.push(match self.mode {
            TokenizerMode::Word => 0,
            TokenizerMode::Char => 1,
        });
        w.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for (term, postings) in &self.postings {
            write_str(&mut w, term);
            w.extend_from_slice(&(postings.len() as u64).to_le_bytes());
            for p in postings {
                w.extend_from_slice(&p.doc.to_le_bytes());
                w.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        for doc in &self.docs {
            write_str(&mut w, &doc.id);
            w.extend_from_slice(&doc.len.to_le_bytes());
            write_str(&mut w, &doc.text);
            write_str(&mut w, &serde_json::to_string(&doc.payload).expect("payload serializes"));
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Bm25Index, RetrievalError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Cursor { bytes: &bytes, at: 0 };
        if r.take(4)? != b"HQIX" {
            return Err(RetrievalError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(RetrievalError::Corrupt(format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let avgdl = r.f64()?;
        let k1 = r.f64()?;
        let b = r.f64()?;
        let mode = match r.take(1)?[0] {
            0 => TokenizerMode::Word,
            1 => TokenizerMode::Char,
            m => return Err(RetrievalError::Corrupt(format!("bad mode byte {m}"))),
        };
        let n_terms = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.string()?;
            let n_postings = r.u64()? as usize;
            let mut list = Vec::with_capacity(n_postings);
            for _ in 0..n_postings {
                let doc = r.u32()?;
                let tf = r.u32()?;
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        let mut docs = Vec::with_capacity(n);
        let mut id_to_pos = BTreeMap::new();
        let mut total_len = 0u64;
        for pos in 0..n {
            let id = r.string()?;
            let len = r.u64()?;
            let text = r.string()?;
            let payload: DocPayload = serde_json::from_str(&r.string()?)
                .map_err(|e| RetrievalError::Corrupt(format!("payload: {e}")))?;
            total_len += len;
            id_to_pos.insert(id.clone(), pos);
            docs.push(StoredDoc { id, len, text, payload });
        }
        let index = Bm25Index {
            k1,
            b,
            mode,
            docs,
            id_to_pos,
            postings,
            total_len,
        };
        if n > 0 && (index.avgdl() - avgdl).abs() > 1e-12 {
            return Err(RetrievalError::Corrupt(format!(
                "stored avgdl {avgdl} disagrees with document table ({})",
                index.avgdl()
            )));
        }
        Ok(index)
    }
}

fn write_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        if self.at + n > self.bytes.len() {
            return Err(RetrievalError::Corrupt("truncated file".into()));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RetrievalError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RetrievalError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| RetrievalError::Corrupt(format!("non-utf8 string: {e}")))
    }
}

/// Assembles the typed MIS bundle for a question: top-cap articles with their
/// attached comments and top-cap related QA pairs, each with its BM25 score.
/// The sample's own QA pair (`self_id`) is excluded.
pub fn assemble_mis(
    question: &str,
    article_index: &Bm25Index,
    qa_index: &Bm25Index,
    caps: MisCaps,
    self_id: &str,
) -> MisBundle {
    let mut bundle = MisBundle::default();
    let q_art = tokenize(question, article_index.mode());
    for hit in article_index.retrieve(&q_art, caps.articles, &[self_id]) {
        let comments = match article_index.payload(&hit.doc_id) {
            Some(DocPayload::Article { comments }) => comments
                .iter()
                .map(|(id, text)| crate::dataset::CommentRec {
                    id: id.clone(),
                    text: text.clone(),
                })
                .collect(),
            _ => Vec::new(),
        };
        let text = article_index.doc_text(&hit.doc_id).unwrap_or_default().to_string();
        bundle.articles.push(ArticleEntry {
            id: hit.doc_id,
            text,
            score: hit.score,
            comments,
        });
    }
    let q_qa = tokenize(question, qa_index.mode());
    for hit in qa_index.retrieve(&q_qa, caps.related_qa, &[self_id]) {
        if let Some(DocPayload::Qa { question, answer }) = qa_index.payload(&hit.doc_id) {
            bundle.related_qa.push(RelatedQaEntry {
                id: hit.doc_id,
                question: question.clone(),
                answer: answer.clone(),
                score: hit.score,
            });
        }
    }
    bundle
}

/// Augments every sample with up to `k` related QA pairs retrieved from the
/// corpus's own QA index, self-excluded by sample id.
pub fn build_msmplus(
    samples: &[TrainingSample],
    k: usize,
    mode: TokenizerMode,
) -> Result<Vec<TrainingSample>, RetrievalError> {
    let docs = samples
        .iter()
        .map(|s| {
            Document::from_qa(&QaDoc {
                id: s.id.clone(),
                question: s.question.clone(),
                answer: s.answer.clone(),
            })
        })
        .collect();
    let index = Bm25Index::build_default(docs, mode)?;
    let mut out = samples.to_vec();
    for sample in &mut out {
        let query = tokenize(&sample.question, mode);
        sample.mis.related_qa = index
            .retrieve(&query, k, &[sample.id.as_str()])
            .into_iter()
            .filter_map(|hit| match index.payload(&hit.doc_id) {
                Some(DocPayload::Qa { question, answer }) => Some(RelatedQaEntry {
                    id: hit.doc_id,
                    question: question.clone(),
                    answer: answer.clone(),
                    score: hit.score,
                }),
                _ => None,
            })
            .collect();
    }
    Ok(out)
}
