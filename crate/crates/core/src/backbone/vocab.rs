//! Word-level vocabulary and tokenizer.
//!
//! Normalization: text is lowercased and split into maximal runs of
//! alphanumeric characters, hyphens and apostrophes; leading and trailing
//! hyphens/apostrophes are stripped and empty runs dropped. The embedding
//! exporter applies the same rule, so cache rows line up with these words.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 4] = [PAD, UNK, CLS, MASK];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const MASK_ID: usize = 3;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '\''
}

/// Splits raw text into normalized words.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !is_word_char(c))
        .map(|w| w.trim_matches(|c| c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = CwtmError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds from an explicit token list whose first entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(CwtmError::Config("vocabulary must start with the special tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(CwtmError::Config("vocabulary has duplicate tokens".into()));
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Number of ordinary (non-special) words.
    pub fn word_count(&self) -> usize {
        self.tokens.len() - SPECIALS.len()
    }
}

/// The `max_size` most frequent words of the corpus plus the four specials.
/// Frequency ties are broken lexicographically.
pub fn build_vocab(corpus: &[DocumentRecord], max_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(CwtmError::EmptyCorpus);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for w in split_words(&doc.text) {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocab::from_tokens(tokens)
}

/// A document split into words and mapped to vocabulary ids. The toy
/// tokenizer is word-level, so every span has length one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub words: Vec<String>,
    pub token_ids: Vec<usize>,
    pub word_spans: Vec<Range<usize>>,
    pub mask: Vec<bool>,
}

impl TokenizedDoc {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Out-of-vocabulary words map to `[UNK]` but keep their surface form.
pub fn tokenize(doc: &DocumentRecord, vocab: &Vocab) -> TokenizedDoc {
    let words = split_words(&doc.text);
    let token_ids = words.iter().map(|w| vocab.id(w).unwrap_or(UNK_ID)).collect();
    let word_spans = (0..words.len()).map(|i| i..i + 1).collect();
    let mask = vec![true; words.len()];
    TokenizedDoc {
        doc_id: doc.id.clone(),
        words,
        token_ids,
        word_spans,
        mask,
    }
}
