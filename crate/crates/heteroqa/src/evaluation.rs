//! Word-overlap evaluation: BLEU and BLEU-1..4, ROUGE-L, METEOR-lite, the
//! Retrieved1 baseline, and run-level report generation.
//!
//! BLEU-n is corpus-level cumulative BLEU with uniform weights, clipped
//! n-gram counts, and the usual brevity penalty. The standalone "BLEU"
//! column is the mean of sentence-level smoothed cumulative BLEU-4
//! (epsilon on zero counts). METEOR-lite is METEOR with exact matching only
//! (no stemming or synonyms) and the canonical alpha/gamma/cube parameters;
//! the alignment maximizes matches, then minimizes chunks.

use crate::dataset::TrainingSample;
use crate::textprep::{tokenize, TokenizerMode};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate/reference count mismatch: {candidates} vs {references}")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
    #[error("id sets differ; missing from {side}: {ids:?}")]
    IdMismatch { side: String, ids: Vec<String> },
    #[error("cannot evaluate an empty corpus")]
    Empty,
}

const BLEU_MAX_N: usize = 4;
const SMOOTH_EPS: f64 = 1e-9;
const METEOR_ALPHA: f64 = 0.9;
const METEOR_GAMMA: f64 = 0.5;
const METEOR_BEAM_BUDGET: usize = 200_000;

/// All metrics in [0, 1]; the rendered table scales the BLEU family by 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("metric    value\n");
        out.push_str("(BLEU family x100; BLEU = mean sentence-level smoothed BLEU-4;\n");
        out.push_str(" METEOR-lite: exact-match alignment only)\n");
        out.push_str(&format!("BLEU      {:.2}\n", self.bleu * 100.0));
        out.push_str(&format!("BLEU1     {:.2}\n", self.bleu1 * 100.0));
        out.push_str(&format!("BLEU2     {:.2}\n", self.bleu2 * 100.0));
        out.push_str(&format!("BLEU3     {:.2}\n", self.bleu3 * 100.0));
        out.push_str(&format!("BLEU4     {:.2}\n", self.bleu4 * 100.0));
        out.push_str(&format!("ROUGE-L   {:.4}\n", self.rouge_l));
        out.push_str(&format!("METEOR    {:.4}\n", self.meteor));
        out.push_str(&format!("samples   {}\n", self.n_samples));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand_counts = ngram_counts(cand, n);
    let ref_counts = ngram_counts(reference, n);
    let matches = cand_counts
        .iter()
        .map(|(gram, c)| (*c).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let total = cand.len().saturating_sub(n - 1);
    (matches, total)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// Corpus-level cumulative BLEU-n plus the mean sentence-level smoothed
/// BLEU-4 reported as the standalone "BLEU".
pub fn bleu(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<(f64, [f64; BLEU_MAX_N]), EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    let mut sentence_sum = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        let mut sent_log_sum = 0.0;
        for n in 1..=BLEU_MAX_N {
            let (m, t) = clipped_matches(cand, reference, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
            let p = if m > 0 {
                m as f64 / t as f64
            } else {
                SMOOTH_EPS / t.max(1) as f64
            };
            sent_log_sum += p.ln() / BLEU_MAX_N as f64;
        }
        sentence_sum += brevity_penalty(cand.len(), reference.len()) * sent_log_sum.exp();
    }
    let bp = brevity_penalty(cand_len, ref_len);
    let mut cumulative = [0.0; BLEU_MAX_N];
    for n in 1..=BLEU_MAX_N {
        let mut log_sum = 0.0;
        let mut any_zero = false;
        for k in 1..=n {
            if matches[k - 1] == 0 || totals[k - 1] == 0 {
                any_zero = true;
                break;
            }
            log_sum += (matches[k - 1] as f64 / totals[k - 1] as f64).ln() / n as f64;
        }
        cumulative[n - 1] = if any_zero { 0.0 } else { bp * log_sum.exp() };
    }
    Ok((sentence_sum / candidates.len() as f64, cumulative))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for x in a {
        let mut prev = 0;
        for (j, y) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if x == y {
                prev + 1
            } else {
                dp[j + 1].max(dp[j])
            };
            prev = cur;
        }
    }
    dp[b.len()]
}

/// Mean over samples of LCS-based F1.
pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        if cand.is_empty() || reference.is_empty() {
            continue;
        }
        let lcs = lcs_len(cand, reference) as f64;
        let p = lcs / cand.len() as f64;
        let r = lcs / reference.len() as f64;
        if p + r > 0.0 {
            sum += 2.0 * p * r / (p + r);
        }
    }
    Ok(sum / candidates.len() as f64)
}

/// Exact-match alignment: pairs (candidate position, reference position),
/// maximizing matches and then minimizing chunks.
struct AlignSearch<'a> {
    cand: &'a [String],
    refs: &'a [String],
    ref_used: Vec<bool>,
    cand_remaining: BTreeMap<&'a str, usize>,
    ref_remaining: BTreeMap<&'a str, usize>,
    best_matches: usize,
    best_chunks: usize,
    nodes: usize,
    exhausted: bool,
}

impl<'a> AlignSearch<'a> {
    fn optimistic(&self) -> usize {
        self.cand_remaining
            .iter()
            .map(|(tok, c)| (*c).min(self.ref_remaining.get(tok).copied().unwrap_or(0)))
            .sum()
    }

    fn dfs(&mut self, i: usize, matches: usize, chunks: usize, last: Option<(usize, usize)>) {
        self.nodes += 1;
        if self.nodes > METEOR_BEAM_BUDGET {
            self.exhausted = true;
            return;
        }
        let bound = matches + self.optimistic();
        if bound < self.best_matches || (bound == self.best_matches && chunks >= self.best_chunks)
        {
            return;
        }
        if i == self.cand.len() {
            if matches > self.best_matches
                || (matches == self.best_matches && chunks < self.best_chunks)
            {
                self.best_matches = matches;
                self.best_chunks = chunks;
            }
            return;
        }
        let tok = self.cand[i].as_str();
        *self.cand_remaining.get_mut(tok).expect("counted") -= 1;
        // try matching this candidate position to each free reference slot
        for j in 0..self.refs.len() {
            if self.ref_used[j] || self.refs[j] != self.cand[i] {
                continue;
            }
            self.ref_used[j] = true;
            *self.ref_remaining.get_mut(tok).expect("counted") -= 1;
            let same_chunk = match last {
                Some((pi, pj)) => pi + 1 == i && pj + 1 == j,
                None => false,
            };
            let next_chunks = if same_chunk { chunks } else { chunks + 1 };
            self.dfs(i + 1, matches + 1, next_chunks, Some((i, j)));
            *self.ref_remaining.get_mut(tok).expect("counted") += 1;
            self.ref_used[j] = false;
            if self.exhausted {
                break;
            }
        }
        // or leave it unmatched
        if !self.exhausted {
            self.dfs(i + 1, matches, chunks, last);
        }
        *self.cand_remaining.get_mut(tok).expect("counted") += 1;
    }
}

/// Returns (matches, chunks) of the best alignment. Falls back to a greedy
/// left-to-right alignment when the exact search exceeds its node budget.
fn align(cand: &[String], refs: &[String]) -> (usize, usize) {
    fn count(tokens: &[String]) -> BTreeMap<&str, usize> {
        let mut m: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *m.entry(t.as_str()).or_insert(0) += 1;
        }
        m
    }
    let cand_counts = count(cand);
    let ref_counts = count(refs);
    let max_matches: usize = cand_counts
        .iter()
        .map(|(tok, c)| (*c).min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    if max_matches == 0 {
        return (0, 0);
    }
    let mut search = AlignSearch {
        cand,
        refs,
        ref_used: vec![false; refs.len()],
        cand_remaining: cand_counts,
        ref_remaining: ref_counts,
        best_matches: 0,
        best_chunks: usize::MAX,
        nodes: 0,
        exhausted: false,
    };
    search.dfs(0, 0, 0, None);
    if !search.exhausted && search.best_matches == max_matches {
        return (search.best_matches, search.best_chunks);
    }
    // greedy fallback: match left to right, preferring the reference slot
    // that extends the current chunk
    let mut used = vec![false; refs.len()];
    let mut matches = 0;
    let mut chunks = 0;
    let mut last: Option<(usize, usize)> = None;
    for (i, tok) in cand.iter().enumerate() {
        let preferred = match last {
            Some((pi, pj)) if pi + 1 == i && pj + 1 < refs.len() => Some(pj + 1),
            _ => None,
        };
        let pick = preferred
            .filter(|&j| !used[j] && &refs[j] == tok)
            .or_else(|| (0..refs.len()).find(|&j| !used[j] && &refs[j] == tok));
        if let Some(j) = pick {
            used[j] = true;
            matches += 1;
            let same_chunk = matches > 1
                && match last {
                    Some((pi, pj)) => pi + 1 == i && pj + 1 == j,
                    None => false,
                };
            if !same_chunk {
                chunks += 1;
            }
            last = Some((i, j));
        }
    }
    (matches, chunks)
}

/// METEOR with exact matching only: `F_mean * (1 - gamma * (ch/m)^3)`.
pub fn meteor_lite(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        if cand.is_empty() || reference.is_empty() {
            continue;
        }
        let (matches, chunks) = align(cand, reference);
        if matches == 0 {
            continue;
        }
        let m = matches as f64;
        let p = m / cand.len() as f64;
        let r = m / reference.len() as f64;
        let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
        let penalty = METEOR_GAMMA * (chunks as f64 / m).powi(3);
        sum += f_mean * (1.0 - penalty);
    }
    Ok(sum / candidates.len() as f64)
}

/// The top-1 retrieved document's text as the answer: maximum stored BM25
/// score over articles and related-QA answers; ties prefer articles, then
/// lower id. Empty MIS yields an empty answer.
pub fn retrieved1(sample: &TrainingSample) -> String {
    let mut best: Option<(f64, u8, &str, &str)> = None;
    for a in &sample.mis.articles {
        consider_best(&mut best, a.score, 0, &a.id, &a.text);
    }
    for qa in &sample.mis.related_qa {
        consider_best(&mut best, qa.score, 1, &qa.id, &qa.answer);
    }
    best.map(|(_, _, _, text)| text.to_string()).unwrap_or_default()
}

fn consider_best<'a>(
    best: &mut Option<(f64, u8, &'a str, &'a str)>,
    score: f64,
    type_rank: u8,
    id: &'a str,
    text: &'a str,
) {
    let better = match best {
        None => true,
        Some((s, t, i, _)) => {
            score > *s || (score == *s && (type_rank < *t || (type_rank == *t && id < *i)))
        }
    };
    if better {
        *best = Some((score, type_rank, id, text));
    }
}

/// Joins predictions and references on id, tokenizes, and computes all
/// metrics. The id sets must match exactly.
pub fn evaluate_run(
    predictions: &[(String, String)],
    references: &[(String, String)],
    mode: TokenizerMode,
) -> Result<MetricReport, EvalError> {
    let pred_map: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();
    let ref_map: BTreeMap<&str, &str> = references
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();
    let missing_refs: Vec<String> = pred_map
        .keys()
        .filter(|id| !ref_map.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    if !missing_refs.is_empty() {
        return Err(EvalError::IdMismatch {
            side: "references".into(),
            ids: missing_refs,
        });
    }
    let missing_preds: Vec<String> = ref_map
        .keys()
        .filter(|id| !pred_map.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    if !missing_preds.is_empty() {
        return Err(EvalError::IdMismatch {
            side: "predictions".into(),
            ids: missing_preds,
        });
    }
    if pred_map.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cands = Vec::with_capacity(pred_map.len());
    let mut refs = Vec::with_capacity(ref_map.len());
    for (id, pred) in &pred_map {
        cands.push(tokenize(pred, mode).tokens);
        refs.push(tokenize(ref_map[id], mode).tokens);
    }
    let (bleu_mean, bleu_n) = bleu(&cands, &refs)?;
    Ok(MetricReport {
        bleu: bleu_mean,
        bleu1: bleu_n[0],
        bleu2: bleu_n[1],
        bleu3: bleu_n[2],
        bleu4: bleu_n[3],
        rouge_l: rouge_l(&cands, &refs)?,
        meteor: meteor_lite(&cands, &refs)?,
        n_samples: cands.len(),
    })
}
