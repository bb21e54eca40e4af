//! Bodies of the tracker and kernel invariants, shared by the property
//! suite and the acceptance harness.

use std::sync::OnceLock;

use mcdst::corpus::{generate_fixture_corpus, ChannelConfig, FixtureData, Ontology, FIXTURE_DIM};
use mcdst::model::{ChannelName, ChannelSpec, MultichannelCnn, ScoreVector};
use mcdst::numkit::{max_pool_argmax, sigmoid_scalar, vjp, OpInput};
use mcdst::tracker::{ensemble_scores, track_ensemble, track_segment, Registry, SlotKey};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{embeddings_for, rng, sub_ontology};

pub struct World {
    pub ontology: Ontology,
    pub fixture: FixtureData,
}

pub fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let ontology = sub_ontology("FOOD", 3);
        let fixture = generate_fixture_corpus(7, 12, &ontology, 0.3);
        World { ontology, fixture }
    })
}

/// Small random models for every slot, with output biases spread so that
/// some values cross the threshold and others do not.
pub fn random_registry(seed: u64) -> Registry {
    let w = world();
    let mut r = rng(seed);
    let mut registry = Registry::new();
    for (topic, slot) in w.ontology.pairs() {
        let mut specs = Vec::new();
        for &c in &ChannelName::ALL {
            if r.gen_bool(0.7) {
                specs.push(ChannelSpec::with_counts(c, FIXTURE_DIM, r.gen_range(1..=3), r.gen_range(1..=3)));
            }
        }
        if specs.is_empty() {
            specs.push(ChannelSpec::with_counts(ChannelName::EnglishWord, FIXTURE_DIM, 2, 2));
        }
        let mut model = MultichannelCnn::init(specs, slot.values.clone(), 0.0, r.gen()).unwrap();
        for b in &mut model.output_bias {
            *b = r.gen_range(-2.0..2.0);
        }
        registry.insert(SlotKey::new(&topic.name, &slot.name), model);
    }
    registry
}

pub fn frame_monotonicity(seed: u64, threshold: f64) -> Result<(), TestCaseError> {
    let w = world();
    let registry = random_registry(seed);
    let embeddings = embeddings_for(&w.fixture);
    for segment in w.fixture.corpus.segments().take(3) {
        let out = track_segment(&registry, &embeddings, segment, ChannelConfig::TRAIN, threshold).unwrap();
        prop_assert_eq!(out.turns.len(), segment.turns.len());
        for pair in out.turns.windows(2) {
            prop_assert!(pair[1].is_superset(&pair[0]));
        }
        for (slot, value) in out.final_frame().pairs() {
            prop_assert!(w.ontology.value_index(&segment.topic, slot, value).is_some());
        }
    }
    Ok(())
}

pub fn ensemble_of_one(seed: u64, threshold: f64) -> Result<(), TestCaseError> {
    let w = world();
    let registry = random_registry(seed);
    let embeddings = embeddings_for(&w.fixture);
    let segment = w.fixture.corpus.segments().nth((seed % 12) as usize).unwrap();
    let single = track_segment(&registry, &embeddings, segment, ChannelConfig::TRAIN, threshold).unwrap();
    let ens = track_ensemble(&[&registry], &embeddings, segment, ChannelConfig::TRAIN, threshold).unwrap();
    prop_assert_eq!(single, ens);
    Ok(())
}

pub fn ensemble_permutation(seed: u64, count: usize, len: usize) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let mut vectors: Vec<ScoreVector> = (0..count)
        .map(|_| ScoreVector::from_logits((0..len).map(|_| r.gen_range(-8.0..8.0)).collect()))
        .collect();
    let before = ensemble_scores(&vectors).unwrap();
    vectors.shuffle(&mut r);
    prop_assert_eq!(&before, &ensemble_scores(&vectors).unwrap());
    prop_assert_eq!(&ensemble_scores(&vectors[..1]).unwrap(), &vectors[0]);
    Ok(())
}

pub fn sigmoid_symmetry(x: f64) -> Result<(), TestCaseError> {
    let (a, b) = (sigmoid_scalar(x), sigmoid_scalar(-x));
    prop_assert!((a + b - 1.0).abs() <= 1e-12, "x = {x}: {a} + {b}");
    prop_assert!((0.0..=1.0).contains(&a));
    Ok(())
}

pub fn pooling_tie_break(h: Vec<i32>) -> Result<(), TestCaseError> {
    let h: Vec<f64> = h.into_iter().map(f64::from).collect();
    let (value, index) = max_pool_argmax(&h).unwrap();
    prop_assert!(h.iter().all(|&x| x <= value));
    prop_assert_eq!(h[index], value);
    prop_assert!(h[..index].iter().all(|&x| x < value));
    let g = vjp(OpInput::MaxPoolArgmax { h: &h }, &[1.0]).unwrap();
    let grad = g.gradients[0].values();
    prop_assert_eq!(grad.iter().filter(|&&x| x != 0.0).count(), 1);
    prop_assert_eq!(grad[index], 1.0);
    Ok(())
}

/// Finite values: a dense band around zero plus normals, subnormals and
/// zeros across the whole exponent range.
pub fn any_finite() -> impl Strategy<Value = f64> {
    prop_oneof![-800f64..800.0, prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO]
}

fn outcome<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Option<String> {
    r.err().map(|e| e.to_string())
}

/// Runs each invariant for `cases` cases; returns (name, failure message).
pub fn run_all(cases: u32) -> Vec<(&'static str, Option<String>)> {
    let runner = || {
        TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        })
    };
    let theta = || (any::<u64>(), 0.05f64..0.95);
    vec![
        ("frame monotonicity", outcome(runner().run(&theta(), |(s, t)| frame_monotonicity(s, t)))),
        ("ensemble-of-one identity", outcome(runner().run(&theta(), |(s, t)| ensemble_of_one(s, t)))),
        (
            "ensemble permutation invariance",
            outcome(runner().run(&(any::<u64>(), 1usize..6, 1usize..8), |(s, c, l)| ensemble_permutation(s, c, l))),
        ),
        ("sigmoid symmetry", outcome(runner().run(&any_finite(), sigmoid_symmetry))),
        (
            "pooling tie-break",
            outcome(runner().run(&prop::collection::vec(-3i32..=3, 1..30), pooling_tie_break)),
        ),
    ]
}
