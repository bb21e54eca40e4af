//! Run configuration: built-in defaults, overridden by a flat `key = value`
//! file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mcdst::corpus::{ChannelConfig, Language};
use mcdst::embeddings::DEFAULT_MAX_TOKENS;
use mcdst::model::ChannelName;
use mcdst::trainer::Hyperparams;

/// Keys accepted in a config file; flags use the same names with dashes.
pub const KEYS: &[&str] = &[
    "ontology",
    "corpus",
    "output",
    "english_word_embeddings",
    "chinese_word_embeddings",
    "chinese_char_embeddings",
    "channels",
    "transcript_language",
    "workers",
    "max_tokens",
    "no_timestamp",
    "learning_rate",
    "l2_coeff",
    "dropout_rate",
    "filters_h1",
    "filters_h2",
    "epochs",
    "batch_size",
    "seed",
    "threshold",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ontology: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub embeddings: BTreeMap<ChannelName, PathBuf>,
    pub channels: Vec<ChannelName>,
    pub transcript_language: Language,
    pub workers: usize,
    pub max_tokens: usize,
    pub no_timestamp: bool,
    pub hyperparams: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ontology: None,
            corpus: None,
            output: None,
            embeddings: BTreeMap::new(),
            channels: ChannelName::ALL.to_vec(),
            transcript_language: Language::English,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            max_tokens: DEFAULT_MAX_TOKENS,
            no_timestamp: false,
            hyperparams: Hyperparams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            transcript_language: self.transcript_language,
        }
    }

    /// Sets one field. Relative paths are resolved against `base`.
    pub fn apply(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), String> {
        let value = value.trim();
        let path = || match base {
            Some(b) if Path::new(value).is_relative() => b.join(value),
            _ => PathBuf::from(value),
        };
        let hp = &mut self.hyperparams;
        match key {
            "ontology" => self.ontology = Some(path()),
            "corpus" => self.corpus = Some(path()),
            "output" => self.output = Some(path()),
            "english_word_embeddings" => {
                self.embeddings.insert(ChannelName::EnglishWord, path());
            }
            "chinese_word_embeddings" => {
                self.embeddings.insert(ChannelName::ChineseWord, path());
            }
            "chinese_char_embeddings" => {
                self.embeddings.insert(ChannelName::ChineseChar, path());
            }
            "channels" => {
                let names = value
                    .split(',')
                    .map(|s| s.trim().parse::<ChannelName>().map_err(|e| format!("channels: {e}")))
                    .collect::<Result<Vec<_>, _>>()?;
                if names.is_empty() {
                    return Err("channels: at least one channel is required".into());
                }
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(format!("channels: {n} listed twice"));
                    }
                }
                self.channels = names;
            }
            "transcript_language" => {
                self.transcript_language = match value {
                    "english" => Language::English,
                    "chinese" => Language::Chinese,
                    _ => return Err(format!("transcript_language: expected english or chinese, got {value:?}")),
                }
            }
            "workers" => {
                self.workers = parse(key, value)?;
                if self.workers == 0 {
                    return Err("workers must be positive".into());
                }
            }
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "no_timestamp" => self.no_timestamp = parse_bool(key, value)?,
            "learning_rate" => hp.learning_rate = parse(key, value)?,
            "l2_coeff" => hp.l2_coeff = parse(key, value)?,
            "dropout_rate" => hp.dropout_rate = parse(key, value)?,
            "filters_h1" => hp.filters_h1 = parse(key, value)?,
            "filters_h2" => hp.filters_h2 = parse(key, value)?,
            "epochs" => hp.epochs = parse(key, value)?,
            "batch_size" => hp.batch_size = parse(key, value)?,
            "seed" => hp.seed = parse(key, value)?,
            "threshold" => hp.threshold = parse(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies a config file's text. Blank lines and `#` comments are
    /// skipped; later lines win.
    pub fn apply_file_text(&mut self, text: &str, base: Option<&Path>) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            self.apply(key.trim(), value, base)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_file_text(&text, path.parent())
            .map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Defaults, then `file`, then `flags` in order.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, String)]) -> Result<Self, String> {
        let mut config = Self::default();
        if let Some(f) = file {
            config.apply_file(f)?;
        }
        for (key, value) in flags {
            config.apply(key, value, None).map_err(|e| format!("--{}: {e}", key.replace('_', "-")))?;
        }
        Ok(config)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, String> {
        value
            .as_deref()
            .ok_or_else(|| format!("{key} is required (flag --{} or config key {key})", key.replace('_', "-")))
    }

    /// Embedding paths for the configured channels; every one must exist.
    pub fn embedding_paths(&self) -> Result<Vec<(ChannelName, &Path)>, String> {
        self.channels
            .iter()
            .map(|&c| {
                let p = self
                    .embeddings
                    .get(&c)
                    .ok_or_else(|| format!("no embedding table configured for channel {c} (key {c}_embeddings)"))?;
                Ok((c, p.as_path()))
            })
            .collect()
    }

    /// Flat `key = value` rendering that [`RunConfig::apply_file_text`]
    /// reads back to the same configuration.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out += &format!("{k} = {v}\n");
        for (k, v) in [("ontology", &self.ontology), ("corpus", &self.corpus), ("output", &self.output)] {
            if let Some(p) = v {
                line(k, p.display().to_string());
            }
        }
        for (c, p) in &self.embeddings {
            line(&format!("{c}_embeddings"), p.display().to_string());
        }
        let channels: Vec<&str> = self.channels.iter().map(|c| c.as_str()).collect();
        line("channels", channels.join(","));
        line(
            "transcript_language",
            match self.transcript_language {
                Language::English => "english".into(),
                Language::Chinese => "chinese".into(),
            },
        );
        line("max_tokens", self.max_tokens.to_string());
        let hp = &self.hyperparams;
        line("learning_rate", hp.learning_rate.to_string());
        line("l2_coeff", hp.l2_coeff.to_string());
        line("dropout_rate", hp.dropout_rate.to_string());
        line("filters_h1", hp.filters_h1.to_string());
        line("filters_h2", hp.filters_h2.to_string());
        line("epochs", hp.epochs.to_string());
        line("batch_size", hp.batch_size.to_string());
        line("seed", hp.seed.to_string());
        line("threshold", hp.threshold.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.conf");
        fs::write(&f, "# comment\nepochs = 7\nseed = 3\ncorpus = data/c.json\n").unwrap();
        let c = RunConfig::resolve(Some(&f), &[("seed", "9".into())]).unwrap();
        assert_eq!(c.hyperparams.epochs, 7);
        assert_eq!(c.hyperparams.seed, 9);
        assert_eq!(c.hyperparams.learning_rate, 0.001);
        assert_eq!(c.corpus.unwrap(), dir.path().join("data/c.json"));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply("epocs", "1", None).is_err());
        assert!(c.apply("epochs", "many", None).is_err());
        assert!(c.apply("channels", "english_word,english_word", None).is_err());
        assert!(c.apply("transcript_language", "french", None).is_err());
        assert!(c.apply_file_text("epochs 3", None).is_err());
    }

    #[test]
    fn file_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply("ontology", "/x/o.json", None).unwrap();
        c.apply("chinese_char_embeddings", "/x/c.txt", None).unwrap();
        c.apply("channels", "chinese_char", None).unwrap();
        c.apply("dropout_rate", "0.8", None).unwrap();
        let mut back = RunConfig::default();
        back.apply_file_text(&c.to_file_text(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_accepted() {
        let samples = [
            ("channels", "english_word"),
            ("transcript_language", "chinese"),
            ("no_timestamp", "true"),
            ("workers", "2"),
            ("threshold", "0.4"),
        ];
        for key in KEYS {
            let value = samples.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or("1");
            RunConfig::default().apply(key, value, None).unwrap();
        }
    }
}
