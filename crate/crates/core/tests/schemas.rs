//! Every artifact the library writes conforms to its schema file, and the
//! schemas reject the malformed inputs the parsers reject.

mod common;

use std::path::Path;

use common::*;
use mcdst::corpus::{generate_fixture_corpus, parse_corpus, to_corpus_json, ChannelConfig, FIXTURE_ONTOLOGY_JSON};
use mcdst::model::ChannelName;
use mcdst::tracker::{track_corpus, PredictionHeader, Predictions};
use mcdst::trainer::{train_all, write_run, Hyperparams};
use serde_json::{json, Value};

fn validator(name: &str) -> jsonschema::Validator {
    let path = format!("{}/schemas/{name}.schema.json", env!("CARGO_MANIFEST_DIR"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &str) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{what}: {errors:?}");
}

#[test]
fn written_artifacts_match_their_schemas() {
    let ontology = sub_ontology("FOOD", 2);
    let fx = generate_fixture_corpus(3, 8, &ontology, 0.2);
    let emb = embeddings_for(&fx);
    let hp = Hyperparams {
        filters_h1: 2,
        filters_h2: 2,
        epochs: 2,
        ..Hyperparams::default()
    };
    let specs = hp.channel_specs(&ChannelName::ALL, &emb).unwrap();
    let out = train_all(&fx.corpus, &ontology, &specs, &emb, &hp, ChannelConfig::TRAIN, 1).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_run(tmp.path(), &out, &specs, &hp, ChannelConfig::TRAIN, true).unwrap();

    assert_valid(&validator("ontology"), &serde_json::from_str(FIXTURE_ONTOLOGY_JSON).unwrap(), "fixture ontology");
    assert_valid(&validator("ontology"), &ontology.to_json(), "sub-ontology");
    assert_valid(&validator("corpus"), &serde_json::from_str(&to_corpus_json(&fx.corpus)).unwrap(), "corpus");

    let run = read_json(&tmp.path().join("run_manifest.json"));
    assert_valid(&validator("run_manifest"), &run, "run manifest");
    let checkpoint = validator("checkpoint_manifest");
    for slot in run["slots"].as_array().unwrap() {
        let dir = tmp.path().join(slot["checkpoint"].as_str().unwrap());
        assert_valid(&checkpoint, &read_json(&dir.join("manifest.json")), &dir.display().to_string());
    }

    let outputs = track_corpus(&[&out.registry], &emb, &fx.corpus, ChannelConfig::TRAIN, 0.5).unwrap();
    let header = PredictionHeader {
        format: "mcdst-predictions".into(),
        schema_version: 1,
        checkpoints: vec!["run".into()],
        threshold: 0.5,
        channel_config: ChannelConfig::TRAIN,
        ensemble: false,
        created_unix_secs: Some(1),
    };
    let predictions = Predictions::assemble(header, &fx.corpus, &outputs).unwrap();
    assert_valid(&validator("predictions"), &serde_json::from_str(&predictions.to_json()).unwrap(), "predictions");
}

#[test]
fn schemas_reject_what_the_parsers_reject() {
    let ontology = sub_ontology("FOOD", 1);
    let slot = ontology.topics()[0].slots[0].clone();
    let turn = json!({"speaker": "Guide", "transcript": "hello"});
    let segment = |turn: Value| json!([[{"topic": "FOOD", "turns": [turn], "frame": {slot.name.clone(): [slot.values[0].clone()]}}]]);
    let corpus = validator("corpus");

    assert!(corpus.is_valid(&segment(turn.clone())));
    let bad = [
        json!({"speaker": "Driver", "transcript": "hello"}),
        json!({"speaker": "Guide", "transcript": "   "}),
        json!({"speaker": "Guide", "transcript": "hello", "translations": ["a", "b", "c", "d", "e", "f"]}),
        json!({"speaker": "Guide", "transcript": "hello", "extra": 1}),
    ];
    for turn in bad {
        let doc = segment(turn);
        assert!(!corpus.is_valid(&doc), "{doc}");
        assert!(parse_corpus(&doc.to_string(), &ontology).is_err(), "{doc}");
    }
    assert!(!corpus.is_valid(&json!([[{"topic": "FOOD", "turns": []}]])));

    let onto = validator("ontology");
    for doc in [json!({}), json!({"T": {}}), json!({"T": {"S": []}}), json!({"T": {"S": ["a", "a"]}}), json!({"T": {"S": [1]}})] {
        assert!(!onto.is_valid(&doc), "{doc}");
        assert!(mcdst::corpus::parse_ontology(&doc.to_string()).is_err(), "{doc}");
    }
}
