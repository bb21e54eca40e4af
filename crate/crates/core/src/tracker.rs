//! Turn-by-turn tracking over segments and score-averaging model
//! combination.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{segment_texts, ChannelConfig, Corpus, Frame, Ontology, Segment};
use crate::embeddings::TokenMatrix;
use crate::error::{Error, Result};
use crate::model::{predict_labels, predict_scores, ChannelSpec, EmbeddingSet, MultichannelCnn, ScoreVector};

pub const PREDICTIONS_FORMAT: &str = "mcdst-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub topic: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(topic: impl Into<String>, slot: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            slot: slot.into(),
        }
    }

    /// Directory-safe name, `TOPIC__SLOT`.
    pub fn dir_name(&self) -> String {
        format!("{}__{}", self.topic, self.slot)
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.topic, self.slot)
    }
}

/// One model per (topic, slot).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    models: BTreeMap<SlotKey, Arc<MultichannelCnn>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: SlotKey, model: impl Into<Arc<MultichannelCnn>>) {
        self.models.insert(key, model.into());
    }

    pub fn get(&self, topic: &str, slot: &str) -> Option<&Arc<MultichannelCnn>> {
        self.models.get(&SlotKey::new(topic, slot))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &Arc<MultichannelCnn>)> {
        self.models.iter()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Registry whose every model predicts nothing.
    pub fn always_empty(ontology: &Ontology, specs: &[ChannelSpec]) -> Result<Self> {
        let mut out = Self::new();
        for topic in ontology.topics() {
            for slot in &topic.slots {
                let model = MultichannelCnn::always_empty(specs.to_vec(), slot.values.clone())?;
                out.insert(SlotKey::new(&topic.name, &slot.name), model);
            }
        }
        Ok(out)
    }
}

/// Accumulated frame after each turn of one segment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackerOutput {
    pub turns: Vec<Frame>,
}

impl TrackerOutput {
    /// Segment-level prediction; empty for a segment without turns.
    pub fn final_frame(&self) -> Frame {
        self.turns.last().cloned().unwrap_or_default()
    }
}

/// Elementwise mean of equally long score vectors.
pub fn ensemble_scores(vectors: &[ScoreVector]) -> Result<ScoreVector> {
    let first = vectors.first().ok_or(Error::EmptyInput("ensemble_scores"))?;
    let n = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::mismatch("ensemble_scores", n, bad.len()));
    }
    // Summing each column in sorted order makes the mean bitwise independent
    // of the order of `vectors`.
    let mean = |column: &mut Vec<f64>| {
        column.sort_by(f64::total_cmp);
        column.iter().sum::<f64>() / column.len() as f64
    };
    let mut column = Vec::with_capacity(vectors.len());
    let mut scores = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        column.clear();
        column.extend(vectors.iter().map(|v| v.scores[i]));
        scores.push(mean(&mut column));
        column.clear();
        column.extend(vectors.iter().map(|v| v.logits[i]));
        logits.push(mean(&mut column));
    }
    Ok(ScoreVector { logits, scores })
}

/// Token matrices for one turn, reused by every model whose channel layout
/// tokenizes and pads the same way.
struct TurnInputs<'e> {
    embeddings: &'e EmbeddingSet,
    english: String,
    chinese: String,
    cache: Vec<(ChannelSpec, TokenMatrix)>,
}

impl<'e> TurnInputs<'e> {
    fn index(&mut self, spec: &ChannelSpec) -> Result<usize> {
        let same = |s: &ChannelSpec| {
            s.name == spec.name
                && s.tokenizer == spec.tokenizer
                && s.embedding_dim == spec.embedding_dim
                && s.max_height() == spec.max_height()
        };
        if let Some(i) = self.cache.iter().position(|(s, _)| same(s)) {
            return Ok(i);
        }
        let m = self.embeddings.encode(spec, &self.english, &self.chinese)?;
        self.cache.push((spec.clone(), m));
        Ok(self.cache.len() - 1)
    }

    fn scores(&mut self, model: &MultichannelCnn) -> Result<ScoreVector> {
        let idx = model
            .channels
            .iter()
            .map(|c| self.index(&c.spec))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&TokenMatrix> = idx.iter().map(|&i| &self.cache[i].1).collect();
        predict_scores(model, &inputs)
    }
}

fn slot_models<'r>(registries: &[&'r Registry], topic: &str, slot: &str) -> Result<Vec<&'r MultichannelCnn>> {
    let models = registries
        .iter()
        .map(|r| {
            r.get(topic, slot)
                .map(Arc::as_ref)
                .ok_or_else(|| Error::InvalidArgument(format!("no model for {topic}/{slot}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = models.iter().find(|m| m.labels != models[0].labels) {
        return Err(Error::InvalidArgument(format!(
            "label order differs across models for {topic}/{slot}: {:?} vs {:?}",
            models[0].labels, bad.labels
        )));
    }
    Ok(models)
}

fn track_with(
    registries: &[&Registry],
    embeddings: &EmbeddingSet,
    segment: &Segment,
    config: ChannelConfig,
    threshold: f64,
) -> Result<TrackerOutput> {
    if registries.is_empty() {
        return Err(Error::EmptyInput("track_ensemble registries"));
    }
    let slots: Vec<&str> = registries[0]
        .iter()
        .filter(|(k, _)| k.topic == segment.topic)
        .map(|(k, _)| k.slot.as_str())
        .collect();
    if slots.is_empty() {
        return Err(Error::InvalidArgument(format!("no models for topic {}", segment.topic)));
    }
    let per_slot = slots
        .iter()
        .map(|slot| slot_models(registries, &segment.topic, slot).map(|m| (*slot, m)))
        .collect::<Result<Vec<_>>>()?;

    let mut frame = Frame::new();
    let mut out = TrackerOutput::default();
    for (english, chinese) in segment_texts(segment, config)? {
        let mut inputs = TurnInputs {
            embeddings,
            english,
            chinese,
            cache: Vec::new(),
        };
        for (slot, models) in &per_slot {
            let scores = if models.len() == 1 {
                if models[0].always_empty {
                    continue;
                }
                inputs.scores(models[0])?
            } else {
                let each = models.iter().map(|m| inputs.scores(m)).collect::<Result<Vec<_>>>()?;
                ensemble_scores(&each)?
            };
            frame.extend_slot(slot, predict_labels(&scores.scores, &models[0].labels, threshold));
        }
        out.turns.push(frame.clone());
    }
    Ok(out)
}

/// Per turn and slot: score the accumulated text, threshold, and union with
/// the previous turn's frame.
pub fn track_segment(
    registry: &Registry,
    embeddings: &EmbeddingSet,
    segment: &Segment,
    config: ChannelConfig,
    threshold: f64,
) -> Result<TrackerOutput> {
    track_with(&[registry], embeddings, segment, config, threshold)
}

/// As [`track_segment`], thresholding the mean of the registries' scores.
/// The slot set is taken from the first registry; every other registry must
/// cover it with identically ordered labels.
pub fn track_ensemble(
    registries: &[&Registry],
    embeddings: &EmbeddingSet,
    segment: &Segment,
    config: ChannelConfig,
    threshold: f64,
) -> Result<TrackerOutput> {
    track_with(registries, embeddings, segment, config, threshold)
}

/// Tracks every segment; outputs follow the corpus's session layout.
pub fn track_corpus(
    registries: &[&Registry],
    embeddings: &EmbeddingSet,
    corpus: &Corpus,
    config: ChannelConfig,
    threshold: f64,
) -> Result<Vec<Vec<TrackerOutput>>> {
    corpus
        .sessions
        .iter()
        .map(|session| {
            session
                .iter()
                .map(|seg| track_with(registries, embeddings, seg, config, threshold))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHeader {
    pub format: String,
    pub schema_version: u32,
    /// Run or checkpoint directories, in combination order.
    pub checkpoints: Vec<String>,
    pub threshold: f64,
    pub channel_config: ChannelConfig,
    pub ensemble: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnPrediction {
    pub frame: Frame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentPrediction {
    pub topic: String,
    pub turns: Vec<TurnPrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Frame>,
}

impl SegmentPrediction {
    pub fn final_frame(&self) -> Frame {
        self.turns.last().map(|t| t.frame.clone()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPrediction {
    pub segments: Vec<SegmentPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictions {
    pub header: PredictionHeader,
    pub sessions: Vec<SessionPrediction>,
}

impl Predictions {
    /// Pairs tracker outputs with the corpus layout; gold frames are copied
    /// when the corpus has them.
    pub fn assemble(header: PredictionHeader, corpus: &Corpus, outputs: &[Vec<TrackerOutput>]) -> Result<Self> {
        if outputs.len() != corpus.sessions.len() {
            return Err(Error::mismatch("Predictions::assemble", corpus.sessions.len(), outputs.len()));
        }
        let sessions = corpus
            .sessions
            .iter()
            .zip(outputs)
            .map(|(session, outs)| {
                if session.len() != outs.len() {
                    return Err(Error::mismatch("Predictions::assemble", session.len(), outs.len()));
                }
                Ok(SessionPrediction {
                    segments: session
                        .iter()
                        .zip(outs)
                        .map(|(seg, out)| SegmentPrediction {
                            topic: seg.topic.clone(),
                            turns: out.turns.iter().map(|f| TurnPrediction { frame: f.clone() }).collect(),
                            gold: seg.gold.clone(),
                        })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, sessions })
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentPrediction> {
        self.sessions.iter().flat_map(|s| &s.segments)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("predictions serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let p: Predictions = serde_json::from_str(text).map_err(|e| Error::json("<predictions>", e))?;
        p.check_header()?;
        Ok(p)
    }

    fn check_header(&self) -> Result<()> {
        if self.header.format != PREDICTIONS_FORMAT || self.header.schema_version != PREDICTIONS_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported predictions format {:?} version {}",
                self.header.format, self.header.schema_version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Predictions = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        p.check_header()?;
        Ok(p)
    }
}
