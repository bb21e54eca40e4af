//! Pre-trained word embedding tables, per-channel tokenization and the
//! token-matrix construction that feeds the convolution layer.

mod tokenize;
mod word2vec;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub use tokenize::{tokenize, tokenize_chinese_chars, tokenize_english, segment_greedy, TokenizerKind};
pub use word2vec::{
    load_word2vec, load_word2vec_binary, load_word2vec_text, read_word2vec_binary, read_word2vec_text,
    save_word2vec_binary, save_word2vec_text, write_word2vec_binary, write_word2vec_text,
    MAX_TOKEN_BYTES,
};

/// Smallest row count of an embedded input; the tallest default filter has
/// height 2.
pub const DEFAULT_PAD_MINIMUM: usize = 2;
/// Longest input kept, counted in tokens from the end.
pub const DEFAULT_MAX_TOKENS: usize = 400;

/// A frozen vocabulary with one `dim`-wide vector per token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    vectors: Matrix,
    /// Longest token in code points; bounds the greedy segmenter's lookahead.
    max_token_chars: usize,
}

impl EmbeddingTable {
    /// Row `i` of `vectors` belongs to `words[i]`.
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::mismatch("EmbeddingTable::new", words.len(), vectors.rows()));
        }
        let mut vocab = HashMap::with_capacity(words.len());
        let mut max_token_chars = 0;
        for (index, word) in words.iter().enumerate() {
            if word.is_empty() {
                return Err(Error::BadEntry {
                    index,
                    message: "empty token".into(),
                });
            }
            if vocab.insert(word.clone(), index).is_some() {
                return Err(Error::DuplicateToken {
                    token: word.clone(),
                    index,
                });
            }
            max_token_chars = max_token_chars.max(word.chars().count());
        }
        Ok(Self {
            words,
            vocab,
            vectors,
            max_token_chars,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.vectors.row(i))
    }

    pub fn max_token_chars(&self) -> usize {
        self.max_token_chars
    }
}

/// Token sequence of one channel and its stacked embedding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix {
    pub tokens: Vec<String>,
    pub matrix: Matrix,
    pub oov_count: usize,
}

/// Stacks the vectors of `tokens`, using zero rows for out-of-vocabulary
/// tokens, then appends zero rows until there are at least `pad_minimum`.
pub fn embed(table: &EmbeddingTable, tokens: &[String], pad_minimum: usize) -> TokenMatrix {
    let dim = table.dim();
    let rows = tokens.len().max(pad_minimum);
    let mut matrix = Matrix::zeros(rows, dim);
    let mut oov_count = 0;
    for (i, token) in tokens.iter().enumerate() {
        match table.vector(token) {
            Some(v) => matrix.row_mut(i).copy_from_slice(v),
            None => oov_count += 1,
        }
    }
    TokenMatrix {
        tokens: tokens.to_vec(),
        matrix,
        oov_count,
    }
}

/// Keeps the last `max_tokens` tokens.
pub fn truncate_recent(mut tokens: Vec<String>, max_tokens: usize) -> Vec<String> {
    if tokens.len() > max_tokens {
        tokens.drain(..tokens.len() - max_tokens);
    }
    tokens
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub pad_minimum: usize,
    pub max_tokens: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            pad_minimum: DEFAULT_PAD_MINIMUM,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Tokenize, truncate and embed `text` for one channel.
pub fn encode_text(
    table: &EmbeddingTable,
    kind: TokenizerKind,
    text: &str,
    options: EncodeOptions,
) -> TokenMatrix {
    let tokens = truncate_recent(tokenize(kind, text, table), options.max_tokens);
    embed(table, &tokens, options.pad_minimum)
}
