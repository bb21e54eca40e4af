use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Language;
use crate::embeddings::{encode_text, EmbeddingTable, EncodeOptions, TokenMatrix, TokenizerKind};
use crate::error::{Error, Result};

/// The three language views an utterance can be read through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelName {
    EnglishWord,
    ChineseWord,
    ChineseChar,
}

impl ChannelName {
    pub const ALL: [ChannelName; 3] = [
        ChannelName::EnglishWord,
        ChannelName::ChineseWord,
        ChannelName::ChineseChar,
    ];

    pub fn language(self) -> Language {
        match self {
            ChannelName::EnglishWord => Language::English,
            ChannelName::ChineseWord | ChannelName::ChineseChar => Language::Chinese,
        }
    }

    pub fn default_tokenizer(self) -> TokenizerKind {
        match self {
            ChannelName::EnglishWord => TokenizerKind::EnglishLowerWhitespace,
            ChannelName::ChineseWord => TokenizerKind::ChineseWordGreedy,
            ChannelName::ChineseChar => TokenizerKind::ChineseChar,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelName::EnglishWord => "english_word",
            ChannelName::ChineseWord => "chinese_word",
            ChannelName::ChineseChar => "chinese_char",
        }
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {s:?}")))
    }
}

/// Layout of one input channel: its tokenizer, embedding width and filter
/// bank shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: ChannelName,
    pub tokenizer: TokenizerKind,
    pub embedding_dim: usize,
    /// Strictly ascending, all positive.
    pub filter_heights: Vec<usize>,
    /// Filter count for each entry of `filter_heights`.
    pub filter_counts: Vec<usize>,
}

impl ChannelSpec {
    pub fn new(
        name: ChannelName,
        tokenizer: TokenizerKind,
        embedding_dim: usize,
        filter_heights: Vec<usize>,
        filter_counts: Vec<usize>,
    ) -> Result<Self> {
        let spec = Self {
            name,
            tokenizer,
            embedding_dim,
            filter_heights,
            filter_counts,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default tokenizer for the channel and `filters` filters of each of
    /// heights 1 and 2.
    pub fn standard(name: ChannelName, embedding_dim: usize, filters: usize) -> Self {
        Self::with_counts(name, embedding_dim, filters, filters)
    }

    /// Default tokenizer, heights 1 and 2 with their own filter counts.
    pub fn with_counts(name: ChannelName, embedding_dim: usize, filters_h1: usize, filters_h2: usize) -> Self {
        Self {
            name,
            tokenizer: name.default_tokenizer(),
            embedding_dim,
            filter_heights: vec![1, 2],
            filter_counts: vec![filters_h1, filters_h2],
        }
    }

    /// Same layout with every filter count set to `n`.
    pub fn with_uniform_count(&self, n: usize) -> Self {
        Self {
            filter_counts: vec![n; self.filter_heights.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument(format!("{}: embedding dim must be positive", self.name)));
        }
        if self.filter_heights.is_empty()
            || self.filter_heights[0] == 0
            || self.filter_heights.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "{}: filter heights {:?} must be positive and strictly ascending",
                self.name, self.filter_heights
            )));
        }
        if self.filter_counts.len() != self.filter_heights.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: {} filter counts for {} heights",
                self.name,
                self.filter_counts.len(),
                self.filter_heights.len()
            )));
        }
        Ok(())
    }

    pub fn max_height(&self) -> usize {
        self.filter_heights.last().copied().unwrap_or(1)
    }

    /// Pooled features this channel contributes.
    pub fn feature_count(&self) -> usize {
        self.filter_counts.iter().sum()
    }
}

/// Embedding tables keyed by channel, shared read-only across workers.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingSet {
    tables: BTreeMap<ChannelName, Arc<EmbeddingTable>>,
    pub options: EncodeOptions,
}

impl EmbeddingSet {
    pub fn new(options: EncodeOptions) -> Self {
        Self {
            tables: BTreeMap::new(),
            options,
        }
    }

    pub fn with(mut self, name: ChannelName, table: impl Into<Arc<EmbeddingTable>>) -> Self {
        self.insert(name, table);
        self
    }

    pub fn insert(&mut self, name: ChannelName, table: impl Into<Arc<EmbeddingTable>>) {
        self.tables.insert(name, table.into());
    }

    pub fn get(&self, name: ChannelName) -> Option<&Arc<EmbeddingTable>> {
        self.tables.get(&name)
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelName> + '_ {
        self.tables.keys().copied()
    }

    pub fn table_for(&self, spec: &ChannelSpec) -> Result<&EmbeddingTable> {
        let table = self
            .get(spec.name)
            .ok_or_else(|| Error::InvalidArgument(format!("no embedding table for channel {}", spec.name)))?;
        if table.dim() != spec.embedding_dim {
            return Err(Error::mismatch(
                "EmbeddingSet::table_for",
                format!("{} embedding dim {}", spec.name, spec.embedding_dim),
                table.dim(),
            ));
        }
        Ok(table)
    }

    /// Token matrix for `spec`, reading the English or Chinese text by the
    /// channel's language.
    pub fn encode(&self, spec: &ChannelSpec, english: &str, chinese: &str) -> Result<TokenMatrix> {
        let table = self.table_for(spec)?;
        let text = match spec.name.language() {
            Language::English => english,
            Language::Chinese => chinese,
        };
        let options = EncodeOptions {
            pad_minimum: self.options.pad_minimum.max(spec.max_height()),
            ..self.options
        };
        Ok(encode_text(table, spec.tokenizer, text, options))
    }

    pub fn encode_all(&self, specs: &[ChannelSpec], english: &str, chinese: &str) -> Result<Vec<TokenMatrix>> {
        specs.iter().map(|s| self.encode(s, english, chinese)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;

    #[test]
    fn spec_validation() {
        let ok = ChannelSpec::new(ChannelName::ChineseChar, TokenizerKind::ChineseChar, 4, vec![1, 2], vec![3, 2]);
        assert_eq!(ok.unwrap().feature_count(), 5);
        for heights in [vec![], vec![0, 1], vec![2, 1], vec![1, 1]] {
            let bad = ChannelSpec::new(ChannelName::EnglishWord, TokenizerKind::ChineseChar, 4, heights.clone(), vec![1; heights.len()]);
            assert!(bad.is_err());
        }
        let mismatched = ChannelSpec::new(ChannelName::EnglishWord, TokenizerKind::ChineseChar, 4, vec![1, 2], vec![1]);
        assert!(mismatched.is_err());
    }

    #[test]
    fn channel_names_parse() {
        for c in ChannelName::ALL {
            assert_eq!(c.as_str().parse::<ChannelName>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!("klingon_word".parse::<ChannelName>().is_err());
    }

    #[test]
    fn encode_picks_side_and_pads() {
        let en = EmbeddingTable::new(vec!["hi".into()], Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        let zh = EmbeddingTable::new(vec!["好".into()], Matrix::from_rows(&[[3.0]]).unwrap()).unwrap();
        let set = EmbeddingSet::default()
            .with(ChannelName::EnglishWord, en)
            .with(ChannelName::ChineseChar, zh);
        let en_spec = ChannelSpec::standard(ChannelName::EnglishWord, 2, 1);
        let zh_spec = ChannelSpec {
            filter_heights: vec![1, 3],
            ..ChannelSpec::standard(ChannelName::ChineseChar, 1, 1)
        };
        let m = set.encode(&en_spec, "HI", "好").unwrap();
        assert_eq!(m.matrix.shape(), (2, 2));
        assert_eq!(m.matrix.row(0), &[1.0, 2.0]);
        let m = set.encode(&zh_spec, "HI", "好").unwrap();
        assert_eq!(m.matrix.shape(), (3, 1));
        assert_eq!(m.matrix.row(0), &[3.0]);

        let missing = ChannelSpec::standard(ChannelName::ChineseWord, 1, 1);
        assert!(set.encode(&missing, "", "").is_err());
        let wrong_dim = ChannelSpec::standard(ChannelName::EnglishWord, 3, 1);
        assert!(set.encode(&wrong_dim, "", "").is_err());
    }
}
