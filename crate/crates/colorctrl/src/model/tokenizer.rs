//! Whitespace tokenizer with a hashed vocabulary.
//!
//! Prompts are lowercased, split on whitespace, and each word is hashed
//! into a fixed vocabulary (id 0 is reserved for padding). Sequences are
//! truncated or padded to the model's text length, and the span of every
//! surviving word is recorded so edit words can be mapped to token
//! columns later.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::fnv1a;

/// Vocabulary size of the hashed tokenizer, including the pad id 0.
pub const VOCAB_SIZE: usize = 4096;

/// Reserved padding token id.
pub const PAD_ID: u32 = 0;

/// A prompt tokenized to the fixed text length of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    token_ids: Vec<u32>,
    word_spans: Vec<(usize, usize)>,
    words: Vec<String>,
    real_len: usize,
}

impl TokenSequence {
    /// The all-pad sequence, used as the unconditional prompt.
    pub fn empty(config: &ModelConfig) -> Self {
        Self {
            token_ids: vec![PAD_ID; config.n_text],
            word_spans: Vec::new(),
            words: Vec::new(),
            real_len: 0,
        }
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn token_ids_mut(&mut self) -> &mut [u32] {
        &mut self.token_ids
    }

    /// Number of non-pad tokens.
    pub fn real_len(&self) -> usize {
        self.real_len
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Words that survived truncation, in prompt order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Token index range `[start, end)` of word `word_index`.
    pub fn word_span(&self, word_index: usize) -> Option<(usize, usize)> {
        self.word_spans.get(word_index).copied()
    }

    pub fn word_count(&self) -> usize {
        self.word_spans.len()
    }

    /// Index of the first occurrence of `word` (case-insensitive).
    pub fn find_word(&self, word: &str) -> Option<usize> {
        let needle = word.to_lowercase();
        self.words.iter().position(|w| *w == needle)
    }

    /// Token columns covered by a word, as a sorted vector.
    pub fn word_tokens(&self, word_index: usize) -> Option<Vec<usize>> {
        self.word_span(word_index).map(|(a, b)| (a..b).collect())
    }
}

fn word_id(word: &str) -> u32 {
    // Hash into 1..VOCAB_SIZE, keeping 0 for padding.
    (fnv1a(word.as_bytes()) % (VOCAB_SIZE as u64 - 1)) as u32 + 1
}

/// Tokenize `prompt` to exactly `config.n_text` ids.
pub fn tokenize(prompt: &str, config: &ModelConfig) -> Result<TokenSequence> {
    let trimmed = prompt.trim();
    if trimmed.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    let lowered = trimmed.to_lowercase();
    let mut token_ids = Vec::with_capacity(config.n_text);
    let mut word_spans = Vec::new();
    let mut words = Vec::new();
    for word in lowered.split_whitespace() {
        if token_ids.len() >= config.n_text {
            break;
        }
        let start = token_ids.len();
        token_ids.push(word_id(word));
        word_spans.push((start, token_ids.len()));
        words.push(word.to_string());
    }
    let real_len = token_ids.len();
    token_ids.resize(config.n_text, PAD_ID);
    Ok(TokenSequence {
        token_ids,
        word_spans,
        words,
        real_len,
    })
}
