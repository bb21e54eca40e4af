//! Per-slot training with Adam, and the parallel driver that trains every
//! (topic, slot) pair of an ontology.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_examples, ChannelConfig, Corpus, Ontology, SegmentExample};
use crate::embeddings::TokenMatrix;
use crate::error::{Error, Result};
use crate::eval::{f_measure, PairCounts};
use crate::model::{
    backward, forward, load_model, loss, predict_scores, save_model_with_metadata, ChannelName, ChannelSpec,
    EmbeddingSet, Gradients, ManifestChannel, Mode, MultichannelCnn,
};
use crate::tracker::{Registry, SlotKey};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const RUN_FORMAT: &str = "mcdst-run";
pub const RUN_VERSION: u32 = 1;
pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub dropout_rate: f64,
    pub filters_h1: usize,
    pub filters_h2: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            l2_coeff: 0.0005,
            dropout_rate: 0.4,
            filters_h1: 1000,
            filters_h2: 1000,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.l2_coeff.is_finite() && self.l2_coeff >= 0.0) {
            return bad(format!("l2_coeff {} must be non-negative", self.l2_coeff));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.filters_h1 + self.filters_h2 == 0 {
            return bad("at least one filter is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        Ok(())
    }

    /// Heights 1 and 2 with this configuration's filter counts, one spec per
    /// channel, embedding widths read from `embeddings`.
    pub fn channel_specs(&self, names: &[ChannelName], embeddings: &EmbeddingSet) -> Result<Vec<ChannelSpec>> {
        names
            .iter()
            .map(|&name| {
                let table = embeddings
                    .get(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("no embedding table for channel {name}")))?;
                Ok(ChannelSpec::with_counts(name, table.dim(), self.filters_h1, self.filters_h2))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch, dropout active.
    pub epoch_losses: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub wall_time_secs: f64,
    pub example_count: usize,
    pub positive_examples: usize,
    pub always_empty: bool,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &MultichannelCnn, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut MultichannelCnn, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream-separated seed derived from a base seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Micro counts of thresholded predictions against gold bits.
pub fn label_counts(model: &MultichannelCnn, inputs: &[Vec<TokenMatrix>], gold: &[&[f64]], threshold: f64) -> Result<PairCounts> {
    let mut counts = PairCounts::default();
    for (x, g) in inputs.iter().zip(gold) {
        let refs: Vec<&TokenMatrix> = x.iter().collect();
        let s = predict_scores(model, &refs)?;
        for (&p, &t) in s.scores.iter().zip(g.iter()) {
            match (p > threshold, t > 0.5) {
                (true, true) => counts.true_positives += 1,
                (true, false) => counts.false_positives += 1,
                (false, true) => counts.false_negatives += 1,
                (false, false) => {}
            }
        }
    }
    Ok(counts)
}

/// Trains one model on pre-built examples. The model is initialized from
/// `hyperparams.seed`; `labels` gives the output order.
pub fn train_slot_model(
    examples: &[SegmentExample],
    specs: &[ChannelSpec],
    embeddings: &EmbeddingSet,
    labels: Vec<String>,
    hyperparams: &Hyperparams,
) -> Result<(MultichannelCnn, TrainReport)> {
    hyperparams.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInput("train_slot_model examples"));
    }
    if let Some(bad) = examples.iter().find(|e| e.gold_bits.len() != labels.len()) {
        return Err(Error::mismatch("train_slot_model gold bits", labels.len(), bad.gold_bits.len()));
    }
    let start = Instant::now();
    let inputs: Vec<Vec<TokenMatrix>> = examples
        .iter()
        .map(|e| embeddings.encode_all(specs, &e.english_text, &e.chinese_text))
        .collect::<Result<_>>()?;
    let gold: Vec<&[f64]> = examples.iter().map(|e| e.gold_bits.as_slice()).collect();

    let hp = hyperparams;
    let mut model = MultichannelCnn::init(specs.to_vec(), labels, hp.dropout_rate, hp.seed)?;
    let mut adam = Adam::new(&model, hp.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(hp.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            let mut data_loss = 0.0;
            for &i in batch {
                let refs: Vec<&TokenMatrix> = inputs[i].iter().collect();
                let seed = derive_seed(hp.seed, &[DROPOUT_STREAM, epoch as u64, i as u64]);
                let (scores, cache) = forward(&model, &refs, Mode::Train { seed })?;
                data_loss += loss(&scores, gold[i], &model, 0.0)?;
                grads.add_scaled(&backward(&model, &cache, gold[i], 0.0)?, 1.0);
            }
            let n = batch.len() as f64;
            grads.scale(1.0 / n);
            crate::model::add_l2_gradient(&model, &mut grads, hp.l2_coeff);
            let batch_loss = data_loss / n + hp.l2_coeff * model.l2_penalty();
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    unit: "slot model".into(),
                    message: format!("non-finite loss at epoch {epoch}, batch {b}"),
                });
            }
            total += batch_loss;
            batches += 1;
            adam.step(&mut model, &grads);
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    if !model.all_finite() {
        return Err(Error::Training {
            unit: "slot model".into(),
            message: "parameters became non-finite".into(),
        });
    }
    let counts = label_counts(&model, &inputs, &gold, hp.threshold)?;
    let (precision, recall) = counts.precision_recall();
    let report = TrainReport {
        epoch_losses,
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        wall_time_secs: start.elapsed().as_secs_f64(),
        example_count: examples.len(),
        positive_examples: gold.iter().filter(|g| g.iter().any(|&b| b > 0.5)).count(),
        always_empty: false,
    };
    Ok((model, report))
}

/// Outcome of one (topic, slot) training unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub topic: String,
    pub slot: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: TrainReport,
}

#[derive(Debug)]
pub struct SlotFailure {
    pub key: SlotKey,
    pub error: Error,
}

#[derive(Debug)]
pub struct TrainAllOutcome {
    pub registry: Registry,
    /// In ontology order.
    pub reports: Vec<SlotReport>,
    pub failures: Vec<SlotFailure>,
}

/// Every (topic, slot) of the ontology, in ontology order.
pub fn slot_keys(ontology: &Ontology) -> Vec<SlotKey> {
    ontology
        .topics()
        .iter()
        .flat_map(|t| t.slots.iter().map(move |s| SlotKey::new(&t.name, &s.name)))
        .collect()
}

fn train_unit(
    index: usize,
    key: &SlotKey,
    corpus: &Corpus,
    ontology: &Ontology,
    specs: &[ChannelSpec],
    embeddings: &EmbeddingSet,
    hyperparams: &Hyperparams,
    config: ChannelConfig,
) -> Result<(MultichannelCnn, SlotReport)> {
    let labels = ontology
        .slot(&key.topic, &key.slot)
        .ok_or_else(|| Error::InvalidArgument(format!("{key} is not in the ontology")))?
        .values
        .clone();
    let mut examples = Vec::new();
    for seg in corpus.segments().filter(|s| s.topic == key.topic) {
        examples.extend(build_examples(seg, ontology, &key.slot, config)?);
    }
    let seed = derive_seed(hyperparams.seed, &[index as u64]);
    let positives = examples.iter().filter(|e| e.gold_bits.iter().any(|&b| b > 0.5)).count();
    if positives == 0 {
        let model = MultichannelCnn::always_empty(specs.to_vec(), labels)?;
        let report = TrainReport {
            epoch_losses: Vec::new(),
            precision: 1.0,
            recall: 1.0,
            f_measure: 1.0,
            wall_time_secs: 0.0,
            example_count: examples.len(),
            positive_examples: 0,
            always_empty: true,
        };
        log::info!("{key}: no positive examples, using an always-empty model");
        return Ok((model, SlotReport {
            topic: key.topic.clone(),
            slot: key.slot.clone(),
            seed,
            report,
        }));
    }
    let hp = Hyperparams {
        seed,
        ..hyperparams.clone()
    };
    let (model, report) = train_slot_model(&examples, specs, embeddings, labels, &hp)?;
    log::info!(
        "{key}: {} examples, final loss {:.5}, training F {:.4}",
        report.example_count,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.f_measure
    );
    Ok((model, SlotReport {
        topic: key.topic.clone(),
        slot: key.slot.clone(),
        seed,
        report,
    }))
}

/// Trains one model per ontology slot on a pool of `worker_count` threads.
/// Each slot's seed depends only on the base seed and the slot's ontology
/// position, so results do not depend on scheduling.
pub fn train_all(
    corpus: &Corpus,
    ontology: &Ontology,
    specs: &[ChannelSpec],
    embeddings: &EmbeddingSet,
    hyperparams: &Hyperparams,
    config: ChannelConfig,
    worker_count: usize,
) -> Result<TrainAllOutcome> {
    hyperparams.validate()?;
    if !corpus.is_labeled() {
        return Err(Error::Corpus("training requires a labeled corpus".into()));
    }
    for spec in specs {
        embeddings.table_for(spec)?;
    }
    let keys = slot_keys(ontology);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<(MultichannelCnn, SlotReport)>> = pool.install(|| {
        keys.par_iter()
            .enumerate()
            .map(|(i, key)| train_unit(i, key, corpus, ontology, specs, embeddings, hyperparams, config))
            .collect()
    });
    let mut outcome = TrainAllOutcome {
        registry: Registry::new(),
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for (key, result) in keys.into_iter().zip(results) {
        match result {
            Ok((model, report)) => {
                outcome.registry.insert(key, model);
                outcome.reports.push(report);
            }
            Err(error) => {
                log::error!("{key}: {error}");
                let error = match error {
                    Error::Training { message, .. } => Error::Training {
                        unit: key.to_string(),
                        message,
                    },
                    other => other,
                };
                outcome.failures.push(SlotFailure { key, error });
            }
        }
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSlotEntry {
    pub topic: String,
    pub slot: String,
    /// Relative to the run directory.
    pub checkpoint: String,
    pub seed: u64,
    pub always_empty: bool,
    pub example_count: usize,
    pub positive_examples: usize,
    pub epoch_losses: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFailure {
    pub topic: String,
    pub slot: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub schema_version: u32,
    pub hyperparams: Hyperparams,
    pub channel_config: ChannelConfig,
    pub channels: Vec<ManifestChannel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_secs: Option<u64>,
    pub slots: Vec<RunSlotEntry>,
    pub failures: Vec<RunFailure>,
}

/// Writes `checkpoints/<TOPIC>__<SLOT>/` for every trained slot and
/// `run_manifest.json`. Without `timestamps` the output is a pure function
/// of the inputs.
pub fn write_run(
    dir: &Path,
    outcome: &TrainAllOutcome,
    specs: &[ChannelSpec],
    hyperparams: &Hyperparams,
    config: ChannelConfig,
    timestamps: bool,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut slots = Vec::new();
    for rep in &outcome.reports {
        let key = SlotKey::new(&rep.topic, &rep.slot);
        let model = outcome
            .registry
            .get(&key.topic, &key.slot)
            .expect("every report has a model");
        let rel = format!("{CHECKPOINTS_DIR}/{}", key.dir_name());
        let meta = serde_json::json!({
            "topic": key.topic,
            "slot": key.slot,
            "seed": rep.seed,
            "hyperparams": hyperparams,
        });
        save_model_with_metadata(model, &dir.join(&rel), Some(meta))?;
        let r = &rep.report;
        slots.push(RunSlotEntry {
            topic: key.topic,
            slot: key.slot,
            checkpoint: rel,
            seed: rep.seed,
            always_empty: r.always_empty,
            example_count: r.example_count,
            positive_examples: r.positive_examples,
            epoch_losses: r.epoch_losses.clone(),
            precision: r.precision,
            recall: r.recall,
            f_measure: r.f_measure,
            wall_time_secs: timestamps.then_some(r.wall_time_secs),
        });
    }
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        schema_version: RUN_VERSION,
        hyperparams: hyperparams.clone(),
        channel_config: config,
        channels: specs.iter().map(ManifestChannel::from).collect(),
        created_unix_secs: timestamps.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
        slots,
        failures: outcome
            .failures
            .iter()
            .map(|f| RunFailure {
                topic: f.key.topic.clone(),
                slot: f.key.slot.clone(),
                message: f.error.to_string(),
            })
            .collect(),
    };
    let path = dir.join(RUN_MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_run_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(RUN_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format != RUN_FORMAT || manifest.schema_version != RUN_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported run format {:?} version {}",
            path.display(),
            manifest.format,
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

/// Loads every checkpoint listed in a run directory's manifest.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Registry)> {
    let manifest = load_run_manifest(dir)?;
    let mut registry = Registry::new();
    for entry in &manifest.slots {
        let path: PathBuf = dir.join(&entry.checkpoint);
        registry.insert(SlotKey::new(&entry.topic, &entry.slot), load_model(&path)?);
    }
    Ok((manifest, registry))
}
