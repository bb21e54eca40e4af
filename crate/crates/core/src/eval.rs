//! Segment-level metrics: exact-frame accuracy and micro-averaged
//! precision, recall and F-measure over (slot, value) pairs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Frame};
use crate::error::{Error, Result};
use crate::tracker::Predictions;

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `a / b - 1`; `None` when `b` is 0.
pub fn relative_gain(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b - 1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl PairCounts {
    /// Precision and recall. With nothing predicted and nothing expected
    /// both are 1; otherwise an empty denominator gives 0.
    pub fn precision_recall(&self) -> (f64, f64) {
        let (tp, fp, fn_) = (self.true_positives, self.false_positives, self.false_negatives);
        if tp + fp + fn_ == 0 {
            return (1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        (ratio(tp, tp + fp), ratio(tp, tp + fn_))
    }

    pub fn add(&mut self, predicted: &Frame, gold: &Frame) {
        let p: BTreeSet<(&str, &str)> = predicted.pairs().collect();
        let g: BTreeSet<(&str, &str)> = gold.pairs().collect();
        let tp = p.intersection(&g).count();
        self.true_positives += tp;
        self.false_positives += p.len() - tp;
        self.false_negatives += g.len() - tp;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotAccuracy {
    pub segments: usize,
    pub exact: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub segments: usize,
    pub exact_matches: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    #[serde(flatten)]
    pub counts: PairCounts,
    /// Keyed `TOPIC/SLOT`, or `SLOT` when topics are unknown. Covers the
    /// slots that occur in some gold or predicted frame of their topic; a
    /// slot's denominator is the number of segments of that topic.
    pub per_slot: BTreeMap<String, SlotAccuracy>,
}

/// Metrics over aligned final-turn and gold frames.
pub fn evaluate(predictions: &[Frame], golds: &[Frame]) -> Result<MetricReport> {
    let topics = vec![String::new(); predictions.len()];
    evaluate_topics(&topics, predictions, golds)
}

/// As [`evaluate`], with each segment's topic used to scope the per-slot
/// breakdown.
pub fn evaluate_topics(topics: &[String], predictions: &[Frame], golds: &[Frame]) -> Result<MetricReport> {
    if predictions.len() != golds.len() || topics.len() != golds.len() {
        return Err(Error::mismatch(
            "evaluate",
            format!("{} gold segments", golds.len()),
            format!("{} predicted", predictions.len()),
        ));
    }
    let mut counts = PairCounts::default();
    let mut exact = 0;
    for (p, g) in predictions.iter().zip(golds) {
        counts.add(p, g);
        exact += usize::from(p == g);
    }
    let mut slots_by_topic: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for ((t, p), g) in topics.iter().zip(predictions).zip(golds) {
        let entry = slots_by_topic.entry(t).or_default();
        entry.extend(p.slots().map(|(s, _)| s));
        entry.extend(g.slots().map(|(s, _)| s));
    }
    let mut per_slot = BTreeMap::new();
    for (topic, slots) in &slots_by_topic {
        for slot in slots {
            let mut acc = SlotAccuracy::default();
            for ((t, p), g) in topics.iter().zip(predictions).zip(golds) {
                if t == topic {
                    acc.segments += 1;
                    acc.exact += usize::from(p.values(slot) == g.values(slot));
                }
            }
            acc.accuracy = acc.exact as f64 / acc.segments as f64;
            let key = if topic.is_empty() {
                slot.to_string()
            } else {
                format!("{topic}/{slot}")
            };
            per_slot.insert(key, acc);
        }
    }
    let (precision, recall) = counts.precision_recall();
    let segments = golds.len();
    Ok(MetricReport {
        segments,
        exact_matches: exact,
        accuracy: if segments == 0 { 0.0 } else { exact as f64 / segments as f64 },
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        counts,
        per_slot,
    })
}

/// Scores a prediction file against the gold frames of a labeled corpus.
/// Sessions, segments and topics must line up.
pub fn evaluate_predictions(predictions: &Predictions, corpus: &Corpus) -> Result<MetricReport> {
    if predictions.sessions.len() != corpus.sessions.len() {
        return Err(Error::Corpus(format!(
            "predictions cover {} sessions, corpus has {}",
            predictions.sessions.len(),
            corpus.sessions.len()
        )));
    }
    let mut topics = Vec::new();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for (i, (ps, cs)) in predictions.sessions.iter().zip(&corpus.sessions).enumerate() {
        if ps.segments.len() != cs.len() {
            return Err(Error::Corpus(format!(
                "session {i}: predictions cover {} segments, corpus has {}",
                ps.segments.len(),
                cs.len()
            )));
        }
        for (j, (p, c)) in ps.segments.iter().zip(cs).enumerate() {
            if p.topic != c.topic {
                return Err(Error::Corpus(format!(
                    "session {i} segment {j}: predicted topic {} but corpus topic {}",
                    p.topic, c.topic
                )));
            }
            let gold = c
                .gold
                .clone()
                .ok_or_else(|| Error::Corpus(format!("session {i} segment {j} has no gold frame")))?;
            topics.push(c.topic.clone());
            preds.push(p.final_frame());
            golds.push(gold);
        }
    }
    evaluate_topics(&topics, &preds, &golds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Difference to the top row.
    pub delta_accuracy: f64,
    pub delta_f_measure: f64,
    /// Top row's accuracy relative to this row's, `top / this - 1`.
    pub top_accuracy_gain: Option<f64>,
    pub top_f_measure_gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sorted by F-measure, best first; ties keep input order.
    pub rows: Vec<ComparisonRow>,
    /// Slot key to per-run accuracy, runs in row order.
    pub per_slot: BTreeMap<String, Vec<Option<f64>>>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
        let mut out = format!(
            "{:<name_w$}  {:>8}  {:>9}  {:>8}  {:>9}  {:>8}  {:>8}  {:>9}\n",
            "run", "accuracy", "precision", "recall", "f_measure", "d_acc", "d_f", "acc_gain"
        );
        for r in &self.rows {
            let gain = r
                .top_accuracy_gain
                .map(|g| format!("{:.1}%", g * 100.0))
                .unwrap_or_else(|| "-".into());
            out += &format!(
                "{:<name_w$}  {:>8.4}  {:>9.4}  {:>8.4}  {:>9.4}  {:>+8.4}  {:>+8.4}  {:>9}\n",
                r.name, r.accuracy, r.precision, r.recall, r.f_measure, r.delta_accuracy, r.delta_f_measure, gain
            );
        }
        if !self.per_slot.is_empty() {
            let slot_w = self.per_slot.keys().map(String::len).max().unwrap_or(0).max(4);
            let col_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
            out += &format!("\n{:<slot_w$}", "slot");
            for r in &self.rows {
                out += &format!("  {:>col_w$}", r.name);
            }
            out.push('\n');
            for (slot, accs) in &self.per_slot {
                out += &format!("{slot:<slot_w$}");
                for a in accs {
                    let cell = a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
                    out += &format!("  {cell:>col_w$}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Comparison table of named runs, best F-measure first.
pub fn compare_report(runs: &[(String, MetricReport)]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("compare_report runs"));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[b].1.f_measure.total_cmp(&runs[a].1.f_measure));
    let top = &runs[order[0]].1;
    let rows = order
        .iter()
        .map(|&i| {
            let (name, r) = &runs[i];
            ComparisonRow {
                name: name.clone(),
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                f_measure: r.f_measure,
                delta_accuracy: r.accuracy - top.accuracy,
                delta_f_measure: r.f_measure - top.f_measure,
                top_accuracy_gain: relative_gain(top.accuracy, r.accuracy),
                top_f_measure_gain: relative_gain(top.f_measure, r.f_measure),
            }
        })
        .collect();
    let keys: BTreeSet<&String> = runs.iter().flat_map(|(_, r)| r.per_slot.keys()).collect();
    let per_slot = keys
        .into_iter()
        .map(|k| {
            let accs = order.iter().map(|&i| runs[i].1.per_slot.get(k).map(|a| a.accuracy)).collect();
            (k.clone(), accs)
        })
        .collect();
    Ok(Comparison { rows, per_slot })
}
