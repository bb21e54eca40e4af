use serde::{Deserialize, Serialize};

use super::EmbeddingTable;

/// How a channel splits raw text before embedding lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    /// Lowercase, then split on whitespace runs.
    EnglishLowerWhitespace,
    /// One token per code point; ASCII letter runs stay whole.
    ChineseChar,
    /// Greedy longest match against the channel's embedding vocabulary.
    ChineseWordGreedy,
}

impl TokenizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerKind::EnglishLowerWhitespace => "english_lower_whitespace",
            TokenizerKind::ChineseChar => "chinese_char",
            TokenizerKind::ChineseWordGreedy => "chinese_word_greedy",
        }
    }
}

/// `table` supplies the vocabulary for [`TokenizerKind::ChineseWordGreedy`]
/// and is ignored by the other kinds.
pub fn tokenize(kind: TokenizerKind, text: &str, table: &EmbeddingTable) -> Vec<String> {
    match kind {
        TokenizerKind::EnglishLowerWhitespace => tokenize_english(text),
        TokenizerKind::ChineseChar => tokenize_chinese_chars(text),
        TokenizerKind::ChineseWordGreedy => segment_greedy(text, table),
    }
}

pub fn tokenize_english(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

fn ascii_letter_run(chars: &[char]) -> usize {
    chars.iter().take_while(|c| c.is_ascii_alphabetic()).count()
}

pub fn tokenize_chinese_chars(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let len = ascii_letter_run(&chars[i..]).max(1);
        tokens.push(chars[i..i + len].iter().collect());
        i += len;
    }
    tokens
}

/// Greedy longest-prefix segmentation over the whitespace-stripped text.
///
/// When no vocabulary entry starts at the cursor, an ASCII letter run is
/// emitted whole and anything else as a single code point, so the
/// concatenated output always equals the stripped input.
pub fn segment_greedy(text: &str, table: &EmbeddingTable) -> Vec<String> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let longest = table.max_token_chars();
    let mut tokens = Vec::new();
    let mut candidate = String::new();
    let mut i = 0;
    while i < chars.len() {
        let max_len = longest.min(chars.len() - i);
        let matched = (1..=max_len).rev().find(|&len| {
            candidate.clear();
            candidate.extend(&chars[i..i + len]);
            table.contains(&candidate)
        });
        let len = matched.unwrap_or_else(|| ascii_letter_run(&chars[i..]).max(1));
        tokens.push(chars[i..i + len].iter().collect());
        i += len;
    }
    tokens
}
