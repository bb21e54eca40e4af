use serde::{Deserialize, Serialize};

use super::{Ontology, Segment, Turn};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Chinese,
}

/// Which language the transcripts are in; the other language side is read
/// from the 1-best translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub transcript_language: Language,
}

impl ChannelConfig {
    /// English transcripts with Chinese 1-best translations.
    pub const TRAIN: ChannelConfig = ChannelConfig {
        transcript_language: Language::English,
    };
    /// Chinese transcripts with English 1-best translations.
    pub const TEST: ChannelConfig = ChannelConfig {
        transcript_language: Language::Chinese,
    };

    fn side<'t>(&self, turn: &'t Turn, language: Language) -> Option<&'t str> {
        if language == self.transcript_language {
            Some(&turn.transcript)
        } else {
            turn.translations.first().map(String::as_str)
        }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::TRAIN
    }
}

/// One per-turn instance of a (topic, slot) classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentExample {
    pub english_text: String,
    pub chinese_text: String,
    /// 0/1 per ontology value of the slot.
    pub gold_bits: Vec<f64>,
}

/// Accumulated (English, Chinese) text through each turn of the segment.
/// Every turn is prefixed with its speaker marker.
pub fn segment_texts(segment: &Segment, config: ChannelConfig) -> Result<Vec<(String, String)>> {
    let mut english = String::new();
    let mut chinese = String::new();
    let mut out = Vec::with_capacity(segment.turns.len());
    for (t, turn) in segment.turns.iter().enumerate() {
        for (acc, language) in [(&mut english, Language::English), (&mut chinese, Language::Chinese)] {
            let text = config.side(turn, language).ok_or_else(|| {
                Error::Corpus(format!(
                    "turn {t} of a {} segment has no 1-best translation",
                    segment.topic
                ))
            })?;
            if !acc.is_empty() {
                acc.push(' ');
            }
            acc.push_str(turn.speaker.marker());
            acc.push(' ');
            acc.push_str(text);
        }
        out.push((english.clone(), chinese.clone()));
    }
    Ok(out)
}

/// One example per turn for `slot` of the segment's topic; the gold bits
/// mark the segment's gold values for that slot.
pub fn build_examples(
    segment: &Segment,
    ontology: &Ontology,
    slot: &str,
    config: ChannelConfig,
) -> Result<Vec<SegmentExample>> {
    let slot_def = ontology.slot(&segment.topic, slot).ok_or_else(|| {
        Error::InvalidArgument(format!("slot {slot} does not belong to topic {}", segment.topic))
    })?;
    let gold = segment
        .gold
        .as_ref()
        .ok_or_else(|| Error::Corpus("cannot build training examples from an unlabeled segment".into()))?;
    let mut bits = vec![0.0; slot_def.values.len()];
    for value in gold.values(slot).into_iter().flatten() {
        let i = slot_def
            .value_index(value)
            .ok_or_else(|| Error::Corpus(format!("label {value:?} is not in the ontology for {slot}")))?;
        bits[i] = 1.0;
    }
    Ok(segment_texts(segment, config)?
        .into_iter()
        .map(|(english_text, chinese_text)| SegmentExample {
            english_text,
            chinese_text,
            gold_bits: bits.clone(),
        })
        .collect())
}
