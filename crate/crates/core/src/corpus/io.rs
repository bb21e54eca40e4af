//! Corpus JSON: an array of sessions, each an array of segments.
//!
//! ```json
//! [[{"topic": "FOOD",
//!    "turns": [{"speaker": "Guide", "transcript": "...", "translations": ["..."]}],
//!    "frame": {"CUISINE": ["Thai"]}}]]
//! ```
//!
//! `frame` is omitted for unlabeled segments. The schema is in
//! `schemas/corpus.schema.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Frame, Ontology, Segment, Speaker, Turn};
use crate::error::{Error, Result};

const MAX_HYPOTHESES: usize = 5;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker: String,
    transcript: String,
    #[serde(default)]
    translations: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    topic: String,
    turns: Vec<RawTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<BTreeMap<String, BTreeSet<String>>>,
}

fn parse_speaker(raw: &str) -> Option<Speaker> {
    match raw {
        "Guide" => Some(Speaker::Guide),
        "Tourist" => Some(Speaker::Tourist),
        _ => None,
    }
}

fn validate_segment(raw: RawSegment, ontology: &Ontology, at: &str) -> Result<Segment> {
    let err = |msg: String| Error::Corpus(format!("{at}: {msg}"));
    let topic = ontology
        .topic(&raw.topic)
        .ok_or_else(|| err(format!("unknown topic {:?}", raw.topic)))?;
    if raw.turns.is_empty() {
        return Err(err("segment has no turns".into()));
    }
    let turns = raw
        .turns
        .into_iter()
        .enumerate()
        .map(|(t, turn)| {
            let speaker = parse_speaker(&turn.speaker)
                .ok_or_else(|| err(format!("turn {t}: malformed speaker {:?}", turn.speaker)))?;
            if turn.transcript.trim().is_empty() {
                return Err(err(format!("turn {t}: empty transcript")));
            }
            if turn.translations.len() > MAX_HYPOTHESES {
                return Err(err(format!(
                    "turn {t}: {} translation hypotheses, at most {MAX_HYPOTHESES} allowed",
                    turn.translations.len()
                )));
            }
            Ok(Turn {
                speaker,
                transcript: turn.transcript,
                translations: turn.translations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let gold = match raw.frame {
        None => None,
        Some(map) => {
            for (slot, values) in &map {
                let slot_def = topic
                    .slot(slot)
                    .ok_or_else(|| err(format!("unknown slot {}/{slot}", topic.name)))?;
                if let Some(bad) = values.iter().find(|v| slot_def.value_index(v).is_none()) {
                    return Err(err(format!("label {bad:?} is not in the ontology for {}/{slot}", topic.name)));
                }
            }
            Some(Frame::from(map))
        }
    };
    Ok(Segment {
        topic: raw.topic,
        turns,
        gold,
    })
}

/// Parses and validates corpus JSON against `ontology`.
pub fn parse_corpus(json: &str, ontology: &Ontology) -> Result<Corpus> {
    let raw: Vec<Vec<RawSegment>> = serde_json::from_str(json).map_err(|e| Error::Corpus(e.to_string()))?;
    let sessions = raw
        .into_iter()
        .enumerate()
        .map(|(i, session)| {
            session
                .into_iter()
                .enumerate()
                .map(|(j, seg)| validate_segment(seg, ontology, &format!("session {i} segment {j}")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { sessions })
}

pub fn load_corpus(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Corpus> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&json, ontology).map_err(|e| match e {
        Error::Corpus(m) => Error::Corpus(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn speaker_name(s: Speaker) -> &'static str {
    match s {
        Speaker::Guide => "Guide",
        Speaker::Tourist => "Tourist",
    }
}

/// Pretty JSON with sorted frames; identical corpora give identical bytes.
pub fn to_corpus_json(corpus: &Corpus) -> String {
    let raw: Vec<Vec<RawSegment>> = corpus
        .sessions
        .iter()
        .map(|session| {
            session
                .iter()
                .map(|seg| RawSegment {
                    topic: seg.topic.clone(),
                    turns: seg
                        .turns
                        .iter()
                        .map(|t| RawTurn {
                            speaker: speaker_name(t.speaker).to_owned(),
                            transcript: t.transcript.clone(),
                            translations: t.translations.clone(),
                        })
                        .collect(),
                    frame: seg.gold.as_ref().map(|f| {
                        f.slots()
                            .map(|(s, v)| (s.to_owned(), v.clone()))
                            .collect()
                    }),
                })
                .collect()
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&raw).expect("corpus serializes");
    out.push('\n');
    out
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_corpus_json(corpus)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_ontology;

    fn food() -> Ontology {
        parse_ontology(r#"{"FOOD":{"CUISINE":["Thai","Chinese"],"DISH":["Laksa"]}}"#).unwrap()
    }

    const ONE_SEGMENT: &str = r#"[[{"topic": "FOOD",
        "turns": [{"speaker": "Guide", "transcript": "try thai food", "translations": ["试试泰国菜"]}],
        "frame": {"CUISINE": ["Thai"]}}]]"#;

    #[test]
    fn loads_one_segment() {
        let corpus = parse_corpus(ONE_SEGMENT, &food()).unwrap();
        assert_eq!(corpus.segment_count(), 1);
        let seg = corpus.segments().next().unwrap();
        assert_eq!(seg.turns[0].speaker, Speaker::Guide);
        assert!(seg.gold.as_ref().unwrap().contains("CUISINE", "Thai"));
        assert!(corpus.is_labeled());
    }

    #[test]
    fn rejects_unknown_label_value() {
        let bad = ONE_SEGMENT.replace(r#"["Thai"]"#, r#"["Thai2"]"#);
        let msg = parse_corpus(&bad, &food()).unwrap_err().to_string();
        assert!(msg.contains("Thai2"), "{msg}");
    }

    #[test]
    fn rejects_unknown_topic_slot_and_speaker() {
        for (from, to) in [
            (r#""topic": "FOOD""#, r#""topic": "HOTEL""#),
            (r#""CUISINE""#, r#""DRINK""#),
            (r#""Guide""#, r#""guide""#),
        ] {
            let bad = ONE_SEGMENT.replace(from, to);
            assert!(matches!(parse_corpus(&bad, &food()), Err(Error::Corpus(_))), "{to}");
        }
    }

    #[test]
    fn accepts_unlabeled_segments() {
        let json = r#"[[{"topic": "FOOD", "turns": [{"speaker": "Tourist", "transcript": "hello"}]}]]"#;
        let corpus = parse_corpus(json, &food()).unwrap();
        assert!(corpus.segments().next().unwrap().gold.is_none());
        assert!(!corpus.is_labeled());
    }

    #[test]
    fn json_round_trip() {
        let corpus = parse_corpus(ONE_SEGMENT, &food()).unwrap();
        let again = parse_corpus(&to_corpus_json(&corpus), &food()).unwrap();
        assert_eq!(again, corpus);
        let unlabeled = corpus.without_labels();
        assert!(!to_corpus_json(&unlabeled).contains("frame"));
    }
}
