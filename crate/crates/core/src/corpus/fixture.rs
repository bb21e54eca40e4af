//! Synthetic bilingual corpus with paired embedding tables.
//!
//! Every English word of the ontology values and of a small filler lexicon is
//! assigned a pseudo-Chinese word of one to three characters drawn from a
//! shared character pool, so the character channel sees overlapping
//! characters while the word channel sees whole words. Transcripts are
//! English; the 1-best "translation" is the word-by-word Chinese rendering in
//! which each word is replaced, with probability `noise`, by a random Chinese
//! vocabulary word.
//!
//! Each segment mentions all of its gold values in its first turn; later
//! turns are filler with occasional repeated mentions. Segment `i` takes
//! topic `i mod 5` and always labels slot `(i / topics) mod slots` of it, so
//! every slot gets positives once each topic has as many segments as slots.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Frame, Ontology, Segment, Speaker, Turn};
use crate::embeddings::{tokenize_english, EmbeddingTable};
use crate::numkit::Matrix;

/// Width of every fixture embedding table.
pub const FIXTURE_DIM: usize = 16;

const SEGMENTS_PER_SESSION: usize = 5;
const HYPOTHESES: usize = 3;

const FILLERS: &[&str] = &[
    "okay", "yes", "so", "um", "uh", "yah", "maybe", "we", "can", "go", "there", "it", "is", "very",
    "nice", "good", "you", "i", "think", "want", "to", "try", "this", "one", "that", "and", "also",
    "would", "like", "about", "how", "what", "where", "when", "really", "actually", "just", "right",
    "sure", "let's", "well", "but", "because", "if", "then", "have", "has", "a", "for", "in", "on",
    "at", "with", "near", "some", "more", "place", "people", "usually", "quite", "oh", "wow", "thanks",
    "see", "know", "there's", "it's", "do", "not", "all",
];

const CHAR_POOL: &str = "的一是不了人我在有他这中大来上个国到说们为子和你地出道也时年得就那要下以生会自着去之过家学对可里后小么心多天而能好都然没日于起还发成事只作当想看文无开手十用主行方又如前所本见经头面公同三已老从动两长";

/// Generated corpus plus the three embedding tables its text is drawn from.
#[derive(Clone, Debug)]
pub struct FixtureData {
    pub corpus: Corpus,
    pub english_word: EmbeddingTable,
    pub chinese_word: EmbeddingTable,
    pub chinese_char: EmbeddingTable,
}

struct Lexicon {
    english: Vec<String>,
    fillers: Vec<String>,
    /// Chinese rendering of `english[i]`.
    chinese: Vec<String>,
}

impl Lexicon {
    fn build(ontology: &Ontology, rng: &mut ChaCha8Rng) -> Self {
        let mut value_words = Vec::new();
        let mut seen = HashSet::new();
        for (_, slot) in ontology.pairs() {
            for value in &slot.values {
                for word in tokenize_english(value) {
                    if seen.insert(word.clone()) {
                        value_words.push(word);
                    }
                }
            }
        }
        let fillers: Vec<String> = FILLERS
            .iter()
            .filter(|w| !seen.contains(**w))
            .map(|w| w.to_string())
            .collect();
        let english: Vec<String> = fillers.iter().cloned().chain(value_words).collect();

        let pool: Vec<char> = CHAR_POOL.chars().collect();
        let mut used = HashSet::new();
        let chinese = english
            .iter()
            .map(|_| loop {
                let len = match rng.gen_range(0..20) {
                    0..=2 => 1,
                    3..=14 => 2,
                    _ => 3,
                };
                let word: String = (0..len).map(|_| *pool.choose(rng).unwrap()).collect();
                if used.insert(word.clone()) {
                    break word;
                }
            })
            .collect();
        Self {
            english,
            fillers,
            chinese,
        }
    }

    fn index(&self, word: &str) -> usize {
        self.english.iter().position(|w| w == word).expect("word in lexicon")
    }
}

fn random_table(words: Vec<String>, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    let rows = words.len();
    // Values are representable in f32 so the tables survive both file formats.
    let data = (0..rows * FIXTURE_DIM)
        .map(|_| f64::from(rng.gen_range(-1.0f32..1.0)))
        .collect();
    EmbeddingTable::new(words, Matrix::new(rows, FIXTURE_DIM, data).unwrap()).unwrap()
}

fn push_fillers(words: &mut Vec<usize>, lex: &Lexicon, rng: &mut ChaCha8Rng, lo: usize, hi: usize) {
    for _ in 0..rng.gen_range(lo..=hi) {
        let w = lex.fillers.choose(rng).unwrap();
        words.push(lex.index(w));
    }
}

fn render(words: &[usize], lex: &Lexicon, noise: f64, rng: &mut ChaCha8Rng) -> (String, Vec<String>) {
    let english = words
        .iter()
        .map(|&i| lex.english[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let translations = (0..HYPOTHESES)
        .map(|_| {
            words
                .iter()
                .map(|&i| {
                    if rng.gen_bool(noise) {
                        lex.chinese.choose(rng).unwrap().as_str()
                    } else {
                        lex.chinese[i].as_str()
                    }
                })
                .collect::<String>()
        })
        .collect();
    (english, translations)
}

/// Deterministic in `(seed, n_segments, ontology, noise)`. `noise` is
/// clamped to `[0, 1]`.
pub fn generate_fixture_corpus(seed: u64, n_segments: usize, ontology: &Ontology, noise: f64) -> FixtureData {
    let noise = noise.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = Lexicon::build(ontology, &mut rng);
    let mut english_words: Vec<String> = vec![Speaker::Guide.marker().into(), Speaker::Tourist.marker().into()];
    english_words.extend(lex.english.iter().cloned());
    let english_word = random_table(english_words, &mut rng);
    let chinese_word = random_table(lex.chinese.clone(), &mut rng);
    let mut chars = Vec::new();
    let mut seen = HashSet::new();
    for c in lex.chinese.iter().flat_map(|w| w.chars()) {
        if seen.insert(c) {
            chars.push(c.to_string());
        }
    }
    let chinese_char = random_table(chars, &mut rng);
    // Translation noise draws from its own stream so dialogs do not depend on `noise`.
    let mut noise_rng = rng.clone();
    noise_rng.set_stream(1);

    let topics = ontology.topics();
    let mut segments = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let topic = &topics[i % topics.len()];
        let forced = (i / topics.len()) % topic.slots.len();
        let mut slot_ids = vec![forced];
        let extra = rng.gen_range(0..=2usize).min(topic.slots.len() - 1);
        while slot_ids.len() < 1 + extra {
            let s = rng.gen_range(0..topic.slots.len());
            if !slot_ids.contains(&s) {
                slot_ids.push(s);
            }
        }
        slot_ids.sort_unstable();

        let mut gold = Frame::new();
        let mut mentions: Vec<Vec<usize>> = Vec::new();
        for &s in &slot_ids {
            let slot = &topic.slots[s];
            let count = if slot.values.len() > 1 && rng.gen_bool(0.25) { 2 } else { 1 };
            for value in slot.values.choose_multiple(&mut rng, count) {
                gold.insert(slot.name.clone(), value.clone());
                mentions.push(tokenize_english(value).iter().map(|w| lex.index(w)).collect());
            }
        }
        mentions.shuffle(&mut rng);

        let n_turns = rng.gen_range(2..=4);
        let mut speaker = if rng.gen_bool(0.5) { Speaker::Guide } else { Speaker::Tourist };
        let mut turns = Vec::with_capacity(n_turns);
        for t in 0..n_turns {
            let mut words = Vec::new();
            if t == 0 {
                push_fillers(&mut words, &lex, &mut rng, 1, 3);
                for m in &mentions {
                    words.extend_from_slice(m);
                    push_fillers(&mut words, &lex, &mut rng, 1, 2);
                }
            } else {
                push_fillers(&mut words, &lex, &mut rng, 2, 4);
                if rng.gen_bool(0.3) {
                    words.extend_from_slice(mentions.choose(&mut rng).unwrap());
                }
                push_fillers(&mut words, &lex, &mut rng, 1, 2);
            }
            let (transcript, translations) = render(&words, &lex, noise, &mut noise_rng);
            turns.push(Turn {
                speaker,
                transcript,
                translations,
            });
            speaker = match speaker {
                Speaker::Guide => Speaker::Tourist,
                Speaker::Tourist => Speaker::Guide,
            };
        }
        segments.push(Segment {
            topic: topic.name.clone(),
            turns,
            gold: Some(gold),
        });
    }

    let mut sessions = Vec::new();
    let mut iter = segments.into_iter().peekable();
    while iter.peek().is_some() {
        sessions.push(iter.by_ref().take(SEGMENTS_PER_SESSION).collect());
    }
    FixtureData {
        corpus: Corpus { sessions },
        english_word,
        chinese_word,
        chinese_char,
    }
}

/// First `n_first` segments (in corpus order) and the rest, each as a
/// single-session corpus.
pub fn split_segments(corpus: &Corpus, n_first: usize) -> (Corpus, Corpus) {
    let all: Vec<Segment> = corpus.segments().cloned().collect();
    let n_first = n_first.min(all.len());
    let (a, b) = all.split_at(n_first);
    let wrap = |s: &[Segment]| Corpus {
        sessions: if s.is_empty() { vec![] } else { vec![s.to_vec()] },
    };
    (wrap(a), wrap(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{fixture_ontology, to_corpus_json};
    use crate::embeddings::{segment_greedy, tokenize_chinese_chars};

    #[test]
    fn deterministic_in_seed() {
        let o = fixture_ontology();
        let a = generate_fixture_corpus(1, 10, &o, 0.0);
        let b = generate_fixture_corpus(1, 10, &o, 0.0);
        assert_eq!(to_corpus_json(&a.corpus), to_corpus_json(&b.corpus));
        assert_eq!(a.english_word, b.english_word);
        assert_eq!(a.chinese_char, b.chinese_char);
        let c = generate_fixture_corpus(2, 10, &o, 0.0);
        assert_ne!(to_corpus_json(&a.corpus), to_corpus_json(&c.corpus));
    }

    #[test]
    fn covers_every_slot_with_ten_segments_per_topic() {
        let o = fixture_ontology();
        let data = generate_fixture_corpus(3, 50, &o, 0.0);
        assert_eq!(data.corpus.segment_count(), 50);
        for (topic, slot) in o.pairs() {
            let positives = data
                .corpus
                .segments()
                .filter(|s| s.topic == topic.name)
                .filter(|s| s.gold.as_ref().unwrap().values(&slot.name).is_some())
                .count();
            assert!(positives > 0, "{}/{}", topic.name, slot.name);
        }
    }

    #[test]
    fn noise_free_text_is_in_vocabulary() {
        let o = fixture_ontology();
        let data = generate_fixture_corpus(4, 20, &o, 0.0);
        for seg in data.corpus.segments() {
            for turn in &seg.turns {
                for w in tokenize_english(&turn.transcript) {
                    assert!(data.english_word.contains(&w), "{w}");
                }
                let zh = &turn.translations[0];
                for c in tokenize_chinese_chars(zh) {
                    assert!(data.chinese_char.contains(&c), "{c}");
                }
                assert_eq!(segment_greedy(zh, &data.chinese_word).concat(), *zh);
            }
        }
    }

    #[test]
    fn noise_changes_only_translations() {
        let o = fixture_ontology();
        let clean = generate_fixture_corpus(5, 10, &o, 0.0);
        let noisy = generate_fixture_corpus(5, 10, &o, 1.0);
        let transcripts = |d: &FixtureData| -> Vec<String> {
            d.corpus.segments().flat_map(|s| s.turns.iter().map(|t| t.transcript.clone())).collect()
        };
        assert_eq!(transcripts(&clean), transcripts(&noisy));
        assert_ne!(to_corpus_json(&clean.corpus), to_corpus_json(&noisy.corpus));
    }

    #[test]
    fn split_keeps_order() {
        let o = fixture_ontology();
        let data = generate_fixture_corpus(6, 12, &o, 0.0);
        let (a, b) = split_segments(&data.corpus, 9);
        assert_eq!((a.segment_count(), b.segment_count()), (9, 3));
        let all: Vec<_> = a.segments().chain(b.segments()).cloned().collect();
        assert_eq!(all, data.corpus.segments().cloned().collect::<Vec<_>>());
    }
}
