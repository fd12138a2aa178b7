//! Tokenization, vocabulary construction, and id encoding shared by the
//! retrieval index and the neural model.
//!
//! Two tokenizer modes: `word` lowercases, splits on whitespace, and
//! separates punctuation (Unicode categories `P*`) into standalone tokens;
//! `char` emits one token per non-whitespace code point. Chinese corpora use
//! char mode, English corpora use word mode.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
/// Number of reserved special ids (PAD, BOS, EOS, UNK).
pub const NUM_SPECIALS: u32 = 4;

pub const DEFAULT_MIN_FREQ: usize = 1;
pub const DEFAULT_MAX_SIZE: usize = 32_000;

#[derive(Debug, Error)]
pub enum TextPrepError {
    #[error("min_freq must be >= 1, got {0}")]
    BadMinFreq(usize),
    #[error("max_size must be >= {NUM_SPECIALS}, got {0}")]
    BadMaxSize(usize),
    #[error("vocabulary i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Tokenizer mode: word-level (English-style) or character-level (Chinese).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Word,
    Char,
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerMode::Word => write!(f, "word"),
            TokenizerMode::Char => write!(f, "char"),
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(TokenizerMode::Word),
            "char" => Ok(TokenizerMode::Char),
            other => Err(format!("unknown tokenizer mode {other:?} (expected word|char)")),
        }
    }
}

/// Tokenized surface form of a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub mode: TokenizerMode,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_punct(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Tokenizes `text` in the given mode. Empty input yields an empty sequence.
pub fn tokenize(text: &str, mode: TokenizerMode) -> TokenSequence {
    let tokens = match mode {
        TokenizerMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenizerMode::Word => {
            let mut tokens = Vec::new();
            for chunk in text.split_whitespace() {
                let mut word = String::new();
                for c in chunk.chars() {
                    if is_punct(c) {
                        if !word.is_empty() {
                            tokens.push(std::mem::take(&mut word).to_lowercase());
                        }
                        tokens.push(c.to_lowercase().collect());
                    } else {
                        word.push(c);
                    }
                }
                if !word.is_empty() {
                    tokens.push(word.to_lowercase());
                }
            }
            tokens
        }
    };
    TokenSequence { tokens, mode }
}

/// Token/id bijection with fixed special ids PAD=0, BOS=1, EOS=2, UNK=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from a corpus: tokens with frequency >= `min_freq`,
    /// ranked by (frequency desc, token asc), truncated to `max_size - 4`
    /// content tokens plus the four specials.
    pub fn build(
        corpus: &[TokenSequence],
        min_freq: usize,
        max_size: usize,
    ) -> Result<Vocabulary, TextPrepError> {
        if min_freq < 1 {
            return Err(TextPrepError::BadMinFreq(min_freq));
        }
        if max_size < NUM_SPECIALS as usize {
            return Err(TextPrepError::BadMaxSize(max_size));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in corpus {
            for tok in &seq.tokens {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            freq.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_SPECIALS as usize);

        Ok(Self::from_content_tokens(
            ranked.into_iter().map(|(t, _)| t.to_string()),
        ))
    }

    fn from_content_tokens(tokens: impl IntoIterator<Item = String>) -> Vocabulary {
        let mut id_to_token: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut token_to_id = BTreeMap::new();
        for tok in tokens {
            let id = id_to_token.len() as u32;
            token_to_id.insert(tok.clone(), id);
            id_to_token.push(tok);
        }
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    /// Total size including the four specials.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token; unknown tokens map to UNK.
    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Surface form for an id, if in range. Specials render as `<pad>` etc.
    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Encodes a token sequence; unknowns map to UNK, optional BOS/EOS framing.
    pub fn encode_ids(&self, seq: &TokenSequence, add_bos_eos: bool) -> Vec<u32> {
        let mut ids = Vec::with_capacity(seq.tokens.len() + 2);
        if add_bos_eos {
            ids.push(BOS_ID);
        }
        ids.extend(seq.tokens.iter().map(|t| self.id_of(t)));
        if add_bos_eos {
            ids.push(EOS_ID);
        }
        ids
    }

    /// Decodes ids to surface tokens, skipping the four specials.
    pub fn decode_ids(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id >= NUM_SPECIALS)
            .filter_map(|&id| self.token_of(id).map(String::from))
            .collect()
    }

    /// Joins decoded tokens back into text: spaces in word mode, nothing in
    /// char mode.
    pub fn decode_to_text(&self, ids: &[u32], mode: TokenizerMode) -> String {
        let toks = self.decode_ids(ids);
        match mode {
            TokenizerMode::Word => toks.join(" "),
            TokenizerMode::Char => toks.concat(),
        }
    }

    /// Writes one content token per line; line number = id - 4.
    pub fn save(&self, path: &Path) -> Result<(), TextPrepError> {
        let mut out = String::new();
        for tok in &self.id_to_token[NUM_SPECIALS as usize..] {
            out.push_str(tok);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, TextPrepError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_content_tokens(
            text.lines().map(|l| l.to_string()),
        ))
    }
}
