//! Batch entry points: train, predict, evaluate, fixture, gradcheck and
//! inspect. Machine artifacts go to files, summaries to stdout, logs to
//! stderr.

/// Writes to stdout, ignoring a closed pipe so `mcdst inspect | head` exits
/// quietly.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use mcdst::corpus::{fixture_ontology, generate_fixture_corpus, load_corpus, load_ontology, save_corpus, Corpus, Ontology};
use mcdst::embeddings::{load_word2vec, save_word2vec_binary, save_word2vec_text, EncodeOptions};
use mcdst::eval::{compare_report, evaluate_predictions};
use mcdst::gradcheck::{check_many, GRADCHECK_TOLERANCE};
use mcdst::model::{load_manifest, ChannelName, EmbeddingSet, MANIFEST_FILE};
use mcdst::tracker::{track_corpus, PredictionHeader, Predictions, Registry, PREDICTIONS_FORMAT, PREDICTIONS_VERSION};
use mcdst::trainer::{load_run, load_run_manifest, train_all, write_run, RUN_MANIFEST_FILE};

pub use config::RunConfig;

/// Exit status 1 for bad configuration or inputs, 2 for failures while
/// running.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "failed: {m}"),
        }
    }
}

fn invalid(e: impl fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "mcdst", version, about = "Multichannel CNN dialog state tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per (topic, slot) and write a run directory.
    Train(ConfigArgs),
    /// Track a corpus with one run directory, or average several.
    Predict(PredictArgs),
    /// Score prediction files against a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus, ontology, embeddings and config.
    Fixture(FixtureArgs),
    /// Check backward-pass gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the manifest of a run or checkpoint directory.
    Inspect(InspectArgs),
}

/// Flags mirroring the config-file keys; a flag overrides the file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<String>,
    #[arg(long)]
    pub corpus: Option<String>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub output: Option<String>,
    #[arg(long)]
    pub english_word_embeddings: Option<String>,
    #[arg(long)]
    pub chinese_word_embeddings: Option<String>,
    #[arg(long)]
    pub chinese_char_embeddings: Option<String>,
    /// Comma-separated channel names, e.g. english_word,chinese_char.
    #[arg(long)]
    pub channels: Option<String>,
    /// Language of the transcripts (english or chinese); the other side is
    /// read from the 1-best translation.
    #[arg(long)]
    pub transcript_language: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long)]
    pub max_tokens: Option<String>,
    /// Omit wall times and creation times from written artifacts.
    #[arg(long)]
    pub no_timestamp: bool,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub l2_coeff: Option<String>,
    #[arg(long)]
    pub dropout_rate: Option<String>,
    #[arg(long)]
    pub filters_h1: Option<String>,
    #[arg(long)]
    pub filters_h2: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let pairs: [(&'static str, &Option<String>); 19] = [
            ("ontology", &self.ontology),
            ("corpus", &self.corpus),
            ("output", &self.output),
            ("english_word_embeddings", &self.english_word_embeddings),
            ("chinese_word_embeddings", &self.chinese_word_embeddings),
            ("chinese_char_embeddings", &self.chinese_char_embeddings),
            ("channels", &self.channels),
            ("transcript_language", &self.transcript_language),
            ("workers", &self.workers),
            ("max_tokens", &self.max_tokens),
            ("learning_rate", &self.learning_rate),
            ("l2_coeff", &self.l2_coeff),
            ("dropout_rate", &self.dropout_rate),
            ("filters_h1", &self.filters_h1),
            ("filters_h2", &self.filters_h2),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("threshold", &self.threshold),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        }
        if self.no_timestamp {
            out.push(("no_timestamp", "true".into()));
        }
        out
    }

    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        RunConfig::resolve(self.config.as_deref(), &self.flags()).map_err(Failure::Validation)
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory written by `train`; repeat to average several runs.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Prediction file, optionally `NAME=FILE`; repeat to compare runs.
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<String>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of segments.
    #[arg(long, default_value_t = 50)]
    pub segments: usize,
    /// Probability of replacing each translated word.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Write the corpus without gold frames.
    #[arg(long)]
    pub unlabeled: bool,
    /// Write embeddings in word2vec binary format instead of text.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random models.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Run directory or checkpoint directory.
    pub path: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Predict(args) => cmd_predict(&args.config.resolve()?, &args.runs),
        Command::Evaluate(args) => cmd_evaluate(&args.config.resolve()?, &args.predictions),
        Command::Fixture(args) => cmd_fixture(&args),
        Command::Gradcheck(args) => cmd_gradcheck(args.seed, args.count),
        Command::Inspect(args) => cmd_inspect(&args.path),
    }
}

fn load_inputs(config: &RunConfig) -> Result<(Ontology, Corpus), Failure> {
    let ontology = load_ontology(config.require(&config.ontology, "ontology").map_err(invalid)?).map_err(invalid)?;
    let corpus =
        load_corpus(config.require(&config.corpus, "corpus").map_err(invalid)?, &ontology).map_err(invalid)?;
    Ok((ontology, corpus))
}

fn load_embeddings(config: &RunConfig, channels: &[ChannelName]) -> Result<EmbeddingSet, Failure> {
    let mut set = EmbeddingSet::new(EncodeOptions {
        max_tokens: config.max_tokens,
        ..EncodeOptions::default()
    });
    for &c in channels {
        let path = config
            .embeddings
            .get(&c)
            .ok_or_else(|| invalid(format!("no embedding table configured for channel {c} (--{}-embeddings)", c.as_str().replace('_', "-"))))?;
        log::info!("loading {c} embeddings from {}", path.display());
        set.insert(c, Arc::new(load_word2vec(path).map_err(invalid)?));
    }
    Ok(set)
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn cmd_train(config: &RunConfig) -> Result<(), Failure> {
    let output = config.require(&config.output, "output").map_err(invalid)?;
    config.hyperparams.validate().map_err(invalid)?;
    config.embedding_paths().map_err(invalid)?;
    let (ontology, corpus) = load_inputs(config)?;
    if !corpus.is_labeled() {
        return Err(invalid("training requires a labeled corpus"));
    }
    let embeddings = load_embeddings(config, &config.channels)?;
    let specs = config
        .hyperparams
        .channel_specs(&config.channels, &embeddings)
        .map_err(invalid)?;
    log::info!(
        "training {} slot models on {} segments with {} workers",
        ontology.pairs().count(),
        corpus.segment_count(),
        config.workers
    );
    let outcome = train_all(
        &corpus,
        &ontology,
        &specs,
        &embeddings,
        &config.hyperparams,
        config.channel_config(),
        config.workers,
    )
    .map_err(runtime)?;
    write_run(
        output,
        &outcome,
        &specs,
        &config.hyperparams,
        config.channel_config(),
        !config.no_timestamp,
    )
    .map_err(runtime)?;
    for r in &outcome.reports {
        let rep = &r.report;
        outln!(
            "{}/{}\texamples={}\tpositives={}\tloss={:.5}\tP={:.4}\tR={:.4}\tF={:.4}{}",
            r.topic,
            r.slot,
            rep.example_count,
            rep.positive_examples,
            rep.epoch_losses.last().copied().unwrap_or(0.0),
            rep.precision,
            rep.recall,
            rep.f_measure,
            if rep.always_empty { "\talways-empty" } else { "" }
        );
    }
    if !outcome.failures.is_empty() {
        let names: Vec<String> = outcome.failures.iter().map(|f| format!("{}: {}", f.key, f.error)).collect();
        return Err(runtime(format!("{} slot(s) failed: {}", names.len(), names.join("; "))));
    }
    log::info!("wrote {}", output.join(RUN_MANIFEST_FILE).display());
    Ok(())
}

pub fn cmd_predict(config: &RunConfig, runs: &[PathBuf]) -> Result<(), Failure> {
    let output = config.require(&config.output, "output").map_err(invalid)?;
    let (_, corpus) = load_inputs(config)?;
    let registries: Vec<Registry> = runs
        .iter()
        .map(|dir| load_run(dir).map(|(_, r)| r).map_err(invalid))
        .collect::<Result<_, _>>()?;
    let channels: BTreeSet<ChannelName> = registries
        .iter()
        .flat_map(|r| r.iter().flat_map(|(_, m)| m.channels.iter().map(|c| c.spec.name)))
        .collect();
    let channels: Vec<ChannelName> = channels.into_iter().collect();
    let embeddings = load_embeddings(config, &channels)?;
    let refs: Vec<&Registry> = registries.iter().collect();
    let threshold = config.hyperparams.threshold;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    log::info!(
        "tracking {} segments with {} run(s)",
        corpus.segment_count(),
        registries.len()
    );
    let outputs = track_corpus(&refs, &embeddings, &corpus, config.channel_config(), threshold).map_err(runtime)?;
    let header = PredictionHeader {
        format: PREDICTIONS_FORMAT.into(),
        schema_version: PREDICTIONS_VERSION,
        checkpoints: runs.iter().map(|p| p.display().to_string()).collect(),
        threshold,
        channel_config: config.channel_config(),
        ensemble: runs.len() > 1,
        created_unix_secs: (!config.no_timestamp).then(now_secs),
    };
    let predictions = Predictions::assemble(header, &corpus, &outputs).map_err(runtime)?;
    predictions.save(output).map_err(runtime)?;
    log::info!("wrote {}", output.display());
    Ok(())
}

pub fn cmd_evaluate(config: &RunConfig, predictions: &[String]) -> Result<(), Failure> {
    let (_, corpus) = load_inputs(config)?;
    if !corpus.is_labeled() {
        return Err(invalid("evaluation requires a labeled corpus"));
    }
    let mut runs = Vec::new();
    for spec in predictions {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        let preds = Predictions::load(&path).map_err(invalid)?;
        let report = evaluate_predictions(&preds, &corpus).map_err(invalid)?;
        runs.push((name, report));
    }
    let comparison = compare_report(&runs).map_err(runtime)?;
    out!("{}", comparison.to_text());
    if let Some(out) = &config.output {
        let json = serde_json::json!({
            "runs": runs.iter().map(|(n, r)| serde_json::json!({"name": n, "report": r})).collect::<Vec<_>>(),
            "comparison": comparison,
        });
        let mut text = serde_json::to_string_pretty(&json).map_err(runtime)?;
        text.push('\n');
        fs::write(out, text).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn cmd_fixture(args: &FixtureArgs) -> Result<(), Failure> {
    let config = args.config.resolve()?;
    let output = config.require(&config.output, "output").map_err(invalid)?;
    if !(0.0..=1.0).contains(&args.noise) {
        return Err(invalid(format!("noise {} outside [0, 1]", args.noise)));
    }
    let ontology = match &config.ontology {
        Some(p) => load_ontology(p).map_err(invalid)?,
        None => fixture_ontology(),
    };
    let data = generate_fixture_corpus(config.hyperparams.seed, args.segments, &ontology, args.noise);
    fs::create_dir_all(output).map_err(|e| runtime(format!("{}: {e}", output.display())))?;
    let write = |name: &str, text: String| {
        let p = output.join(name);
        fs::write(&p, text).map_err(|e| runtime(format!("{}: {e}", p.display())))
    };
    let mut onto = serde_json::to_string_pretty(&ontology.to_json()).map_err(runtime)?;
    onto.push('\n');
    write("ontology.json", onto)?;
    let corpus = if args.unlabeled {
        data.corpus.without_labels()
    } else {
        data.corpus.clone()
    };
    save_corpus(&corpus, output.join("corpus.json")).map_err(runtime)?;
    let ext = if args.binary { "bin" } else { "txt" };
    let mut run_config = RunConfig {
        ontology: Some("ontology.json".into()),
        corpus: Some("corpus.json".into()),
        ..RunConfig::default()
    };
    for (name, table) in [
        (ChannelName::EnglishWord, &data.english_word),
        (ChannelName::ChineseWord, &data.chinese_word),
        (ChannelName::ChineseChar, &data.chinese_char),
    ] {
        let file = format!("{name}.{ext}");
        let path = output.join(&file);
        if args.binary {
            save_word2vec_binary(table, &path).map_err(runtime)?;
        } else {
            save_word2vec_text(table, &path).map_err(runtime)?;
        }
        run_config.embeddings.insert(name, file.into());
    }
    run_config.hyperparams.seed = config.hyperparams.seed;
    write(
        "run.conf",
        format!("# Paths are relative to this file.\n{}", run_config.to_file_text()),
    )?;
    log::info!("wrote {} segments to {}", data.corpus.segment_count(), output.display());
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, count: usize) -> Result<(), Failure> {
    let cases = check_many(seed, count).map_err(runtime)?;
    let mut failed = 0;
    for c in &cases {
        outln!(
            "seed={}\tk={}\tchannels={}\tfilters={}+{}\tlabels={}\tparams={}\tmax_rel_err={:.3e}\tworst={}\tbelow_resolution={}\t{}",
            c.seed,
            c.embedding_dim,
            c.channels,
            c.filters_h1,
            c.filters_h2,
            c.labels,
            c.parameters,
            c.max_relative_error,
            c.worst_tensor,
            c.below_resolution,
            if c.passed() { "ok" } else { "FAIL" }
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(runtime(format!(
            "{failed} of {} gradient checks exceeded relative error {GRADCHECK_TOLERANCE:e} above rounding resolution",
            cases.len()
        )));
    }
    Ok(())
}

pub fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let json = if path.join(RUN_MANIFEST_FILE).exists() {
        serde_json::to_value(load_run_manifest(path).map_err(invalid)?)
    } else if path.join(MANIFEST_FILE).exists() {
        serde_json::to_value(load_manifest(path).map_err(invalid)?)
    } else {
        return Err(invalid(format!(
            "{}: neither {RUN_MANIFEST_FILE} nor {MANIFEST_FILE} found",
            path.display()
        )));
    }
    .map_err(runtime)?;
    outln!("{}", serde_json::to_string_pretty(&json).map_err(runtime)?);
    Ok(())
}
