use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Topics and slot names of the DSTC5 ontology, in declaration order.
pub const DSTC5_LAYOUT: [(&str, &[&str]); 5] = [
    (
        "FOOD",
        &["INFO", "CUISINE", "TYPE_OF_PLACE", "DRINK", "PLACE", "MEAL_TIME", "DISH", "NEIGHBOURHOOD"],
    ),
    (
        "ATTRACTION",
        &["INFO", "TYPE_OF_PLACE", "ACTIVITY", "PLACE", "TIME", "NEIGHBOURHOOD"],
    ),
    ("SHOPPING", &["INFO", "TYPE_OF_PLACE", "PLACE", "NEIGHBOURHOOD", "TIME"]),
    (
        "TRANSPORTATION",
        &["INFO", "FROM", "TO", "STATION", "LINE", "TYPE", "TICKET"],
    ),
    ("ACCOMMODATION", &["INFO", "TYPE_OF_PLACE", "PLACE", "NEIGHBOURHOOD"]),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    /// Candidate values; a value's index is its output unit in the slot model.
    pub values: Vec<String>,
}

impl Slot {
    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topic {
    pub name: String,
    pub slots: Vec<Slot>,
}

impl Topic {
    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// Topic → slot → candidate values, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    topics: Vec<Topic>,
}

impl Ontology {
    pub fn new(topics: Vec<Topic>) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::Ontology("no topics".into()));
        }
        let mut seen_topics = HashSet::new();
        for topic in &topics {
            if !seen_topics.insert(topic.name.as_str()) {
                return Err(Error::Ontology(format!("duplicate topic {}", topic.name)));
            }
            if topic.slots.is_empty() {
                return Err(Error::Ontology(format!("topic {} has no slots", topic.name)));
            }
            let mut seen_slots = HashSet::new();
            for slot in &topic.slots {
                if !seen_slots.insert(slot.name.as_str()) {
                    return Err(Error::Ontology(format!("{}/{}: duplicate slot", topic.name, slot.name)));
                }
                if slot.values.is_empty() {
                    return Err(Error::Ontology(format!("{}/{}: empty value list", topic.name, slot.name)));
                }
                let mut seen_values = HashSet::new();
                for value in &slot.values {
                    if !seen_values.insert(value.as_str()) {
                        return Err(Error::Ontology(format!(
                            "{}/{}: duplicate value {value:?}",
                            topic.name, slot.name
                        )));
                    }
                }
            }
        }
        Ok(Self { topics })
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn topic(&self, name: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn slot(&self, topic: &str, slot: &str) -> Option<&Slot> {
        self.topic(topic)?.slot(slot)
    }

    /// Every (topic, slot) pair in declaration order.
    pub fn pairs(&self) -> impl Iterator<Item = (&Topic, &Slot)> {
        self.topics
            .iter()
            .flat_map(|t| t.slots.iter().map(move |s| (t, s)))
    }

    pub fn value_index(&self, topic: &str, slot: &str, value: &str) -> Option<usize> {
        self.slot(topic, slot)?.value_index(value)
    }

    /// True when topics and slots are exactly those of DSTC5.
    pub fn matches_dstc5_layout(&self) -> bool {
        self.topics.len() == DSTC5_LAYOUT.len()
            && self.topics.iter().zip(DSTC5_LAYOUT).all(|(t, (name, slots))| {
                t.name == name
                    && t.slots.len() == slots.len()
                    && t.slots.iter().zip(slots).all(|(s, n)| s.name == *n)
            })
    }

    pub fn to_json(&self) -> Value {
        let topics: Map<String, Value> = self
            .topics
            .iter()
            .map(|t| {
                let slots: Map<String, Value> = t
                    .slots
                    .iter()
                    .map(|s| (s.name.clone(), Value::from(s.values.clone())))
                    .collect();
                (t.name.clone(), Value::Object(slots))
            })
            .collect();
        Value::Object(topics)
    }
}

fn structure_error(what: impl std::fmt::Display) -> Error {
    Error::Ontology(format!("expected object topic -> object slot -> array of strings; {what}"))
}

/// Parses `{"TOPIC": {"SLOT": ["value", ...]}}`.
pub fn parse_ontology(json: &str) -> Result<Ontology> {
    let root: Value = serde_json::from_str(json).map_err(|e| Error::Ontology(e.to_string()))?;
    let topics = root.as_object().ok_or_else(|| structure_error("root is not an object"))?;
    let mut out = Vec::with_capacity(topics.len());
    for (topic, slots) in topics {
        let slots = slots
            .as_object()
            .ok_or_else(|| structure_error(format!("topic {topic} is not an object")))?;
        let mut topic_slots = Vec::with_capacity(slots.len());
        for (slot, values) in slots {
            let values = values
                .as_array()
                .ok_or_else(|| structure_error(format!("{topic}/{slot} is not an array")))?
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| structure_error(format!("{topic}/{slot} holds a non-string value")))
                })
                .collect::<Result<Vec<_>>>()?;
            topic_slots.push(Slot {
                name: slot.clone(),
                values,
            });
        }
        out.push(Topic {
            name: topic.clone(),
            slots: topic_slots,
        });
    }
    Ontology::new(out)
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ontology(&json)
}
