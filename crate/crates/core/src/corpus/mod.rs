//! Bilingual dialog corpora: ontology, segments, dialog-state frames, the
//! per-turn example builder and a synthetic fixture generator.

mod examples;
mod fixture;
mod io;
mod ontology;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use examples::{build_examples, segment_texts, ChannelConfig, Language, SegmentExample};
pub use fixture::{
    generate_fixture_corpus, split_segments, FixtureData, FIXTURE_DIM,
};
pub use io::{load_corpus, parse_corpus, save_corpus, to_corpus_json};
pub use ontology::{load_ontology, parse_ontology, Ontology, Slot, Topic, DSTC5_LAYOUT};

/// Embedded fixture ontology with the five DSTC5 topics and their 30 slots.
pub const FIXTURE_ONTOLOGY_JSON: &str = include_str!("../../data/ontology.json");

pub fn fixture_ontology() -> Ontology {
    parse_ontology(FIXTURE_ONTOLOGY_JSON).expect("embedded ontology is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Guide,
    Tourist,
}

impl Speaker {
    /// Marker token prepended to each turn's text.
    pub fn marker(self) -> &'static str {
        match self {
            Speaker::Guide => "guide:",
            Speaker::Tourist => "tourist:",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    /// Utterance in the source language of the session.
    pub transcript: String,
    /// Machine translation hypotheses, best first.
    #[serde(default)]
    pub translations: Vec<String>,
}

/// Dialog state: slot name to the set of values mentioned. Slots with no
/// values are never stored, so equality ignores them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, BTreeSet<String>>")]
pub struct Frame(BTreeMap<String, BTreeSet<String>>);

impl From<BTreeMap<String, BTreeSet<String>>> for Frame {
    fn from(mut map: BTreeMap<String, BTreeSet<String>>) -> Self {
        map.retain(|_, values| !values.is_empty());
        Frame(map)
    }
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slot: impl Into<String>, value: impl Into<String>) {
        self.0.entry(slot.into()).or_default().insert(value.into());
    }

    pub fn extend_slot<I, S>(&mut self, slot: &str, values: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut values = values.into_iter().map(Into::into).peekable();
        if values.peek().is_some() {
            self.0.entry(slot.to_owned()).or_default().extend(values);
        }
    }

    pub fn values(&self, slot: &str) -> Option<&BTreeSet<String>> {
        self.0.get(slot)
    }

    pub fn contains(&self, slot: &str, value: &str) -> bool {
        self.0.get(slot).is_some_and(|v| v.contains(value))
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// All (slot, value) pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0
            .iter()
            .flat_map(|(slot, values)| values.iter().map(move |v| (slot.as_str(), v.as_str())))
    }

    pub fn union_with(&mut self, other: &Frame) {
        for (slot, values) in &other.0 {
            self.0.entry(slot.clone()).or_default().extend(values.iter().cloned());
        }
    }

    pub fn is_superset(&self, other: &Frame) -> bool {
        other.pairs().all(|(s, v)| self.contains(s, v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.values().map(BTreeSet::len).sum()
    }
}

/// A contiguous run of turns on one topic; the unit of labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub topic: String,
    pub turns: Vec<Turn>,
    /// Absent for unlabeled data.
    pub gold: Option<Frame>,
}

/// Sessions in order, each an ordered list of segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub sessions: Vec<Vec<Segment>>,
}

impl Corpus {
    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.sessions.iter().flatten()
    }

    /// `(session, segment)` indices alongside each segment.
    pub fn indexed_segments(&self) -> impl Iterator<Item = ((usize, usize), &Segment)> {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().enumerate().map(move |(j, seg)| ((i, j), seg)))
    }

    pub fn segment_count(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    pub fn is_labeled(&self) -> bool {
        self.segments().all(|s| s.gold.is_some())
    }

    /// Copy with every gold frame removed.
    pub fn without_labels(&self) -> Corpus {
        let mut out = self.clone();
        for seg in out.sessions.iter_mut().flatten() {
            seg.gold = None;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_ignores_empty_slots() {
        let json = r#"{"CUISINE": ["Thai"], "DISH": []}"#;
        let frame: Frame = serde_json::from_str(json).unwrap();
        let mut expected = Frame::new();
        expected.insert("CUISINE", "Thai");
        assert_eq!(frame, expected);
        assert_eq!(serde_json::to_string(&frame).unwrap(), r#"{"CUISINE":["Thai"]}"#);

        let mut f = Frame::new();
        f.extend_slot("DISH", Vec::<String>::new());
        assert!(f.is_empty());
    }

    #[test]
    fn frame_union_and_superset() {
        let mut a = Frame::new();
        a.insert("S", "A");
        let mut b = Frame::new();
        b.insert("S", "B");
        b.insert("T", "C");
        let before = a.clone();
        a.union_with(&b);
        assert!(a.is_superset(&before) && a.is_superset(&b));
        assert_eq!(a.len(), 3);
        assert_eq!(
            a.pairs().collect::<Vec<_>>(),
            vec![("S", "A"), ("S", "B"), ("T", "C")]
        );
    }

    #[test]
    fn fixture_ontology_has_thirty_pairs() {
        let o = fixture_ontology();
        assert_eq!(o.topics().len(), 5);
        assert_eq!(o.pairs().count(), 30);
        assert!(o.matches_dstc5_layout());
    }
}
