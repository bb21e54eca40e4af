//! Naive-loop oracles and fixture setups shared by the integration tests.
//! The oracles index matrices by hand and never call into `numkit`.

#![allow(dead_code)]

pub mod invariants;

use mcdst::corpus::{fixture_ontology, parse_ontology, Corpus, FixtureData, Frame, Ontology};
use mcdst::embeddings::TokenMatrix;
use mcdst::model::{forward, ChannelName, ChannelSpec, EmbeddingSet, Mode, MultichannelCnn};
use mcdst::numkit::{affine, conv_valid, max_pool_argmax, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn token_matrix(matrix: Matrix) -> TokenMatrix {
    TokenMatrix {
        tokens: Vec::new(),
        matrix,
        oov_count: 0,
    }
}

pub fn naive_conv(s: &Matrix, m: &Matrix, b: f64) -> Vec<f64> {
    let (n, k) = (s.rows(), s.cols());
    let d = m.rows();
    let mut out = Vec::new();
    for t in 0..n + 1 - d {
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..k {
                acc += m.data()[i * k + j] * s.data()[(t + i) * k + j];
            }
        }
        out.push(acc + b);
    }
    out
}

/// Largest entry and its lowest index.
pub fn naive_max_pool(h: &[f64]) -> (f64, usize) {
    let mut best = 0;
    for i in 1..h.len() {
        if h[i] > h[best] {
            best = i;
        }
    }
    (h[best], best)
}

pub fn naive_affine(w: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows()];
    for i in 0..w.rows() {
        let mut acc = 0.0;
        for j in 0..w.cols() {
            acc += w.data()[i * w.cols() + j] * x[j];
        }
        out[i] = acc + b[i];
    }
    out
}

/// Inference-mode scores by direct summation: per channel, per height, per
/// filter, the max over positions of the rectified convolution; then the
/// output layer and the logistic function.
pub fn naive_forward(model: &MultichannelCnn, inputs: &[&Matrix]) -> Vec<f64> {
    let mut features = Vec::new();
    for (channel, s) in model.channels.iter().zip(inputs) {
        let k = s.cols();
        for bank in &channel.banks {
            let d = bank.height;
            for f in 0..bank.biases.len() {
                let w = bank.weights.row(f);
                let mut best = f64::NEG_INFINITY;
                for t in 0..s.rows() + 1 - d {
                    let mut acc = bank.biases[f];
                    for i in 0..d {
                        for j in 0..k {
                            acc += w[i * k + j] * s.get(t + i, j);
                        }
                    }
                    let act = if acc > 0.0 { acc } else { 0.0 };
                    if act > best {
                        best = act;
                    }
                }
                features.push(best);
            }
        }
    }
    naive_affine(&model.output_weights, &features, &model.output_bias)
        .into_iter()
        .map(|z| 1.0 / (1.0 + (-z).exp()))
        .collect()
}

pub fn embeddings_for(fixture: &FixtureData) -> EmbeddingSet {
    EmbeddingSet::default()
        .with(ChannelName::EnglishWord, fixture.english_word.clone())
        .with(ChannelName::ChineseWord, fixture.chinese_word.clone())
        .with(ChannelName::ChineseChar, fixture.chinese_char.clone())
}

/// The first `slots` slots of one fixture topic as a standalone ontology.
pub fn sub_ontology(topic: &str, slots: usize) -> Ontology {
    let full = fixture_ontology();
    let t = full.topic(topic).expect("fixture topic");
    let mut slot_map = serde_json::Map::new();
    for s in t.slots.iter().take(slots) {
        slot_map.insert(s.name.clone(), serde_json::json!(s.values));
    }
    let mut root = serde_json::Map::new();
    root.insert(topic.to_string(), serde_json::Value::Object(slot_map));
    parse_ontology(&serde_json::Value::Object(root).to_string()).unwrap()
}

pub fn gold_frames(corpus: &Corpus) -> Vec<Frame> {
    corpus.segments().map(|s| s.gold.clone().expect("labeled")).collect()
}

/// Reads a results table row by tracker name from the LaTeX source at the
/// workspace root: the numeric cells in column order.
pub fn published_rows() -> Vec<(String, Vec<f64>)> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.md");
    let text = std::fs::read_to_string(path).expect("workspace document");
    let start = text.find("\\label{tab:results}").expect("results table");
    let body = &text[start..];
    let end = body.find("\\end{tabular}").expect("table end");
    let mut rows = Vec::new();
    for line in body[..end].lines() {
        let line = line.trim();
        if !line.contains('&') || line.contains("\\bf Tracker") || line.contains("tabular") {
            continue;
        }
        let mut cells = line.trim_end_matches("\\\\").split('&');
        let name = cells.next().unwrap().trim().replace("\\#", "#");
        let values: Vec<f64> = cells
            .map(|c| {
                // Decimal literal of the cell; markup such as {1}{c} has no point.
                c.split(|ch: char| !ch.is_ascii_digit() && ch != '.')
                    .filter(|tok| tok.contains('.') && tok.len() > 1)
                    .last()
                    .expect("numeric cell")
                    .parse()
                    .expect("decimal")
            })
            .collect();
        rows.push((name, values));
    }
    rows
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of `conv_valid` from the loop oracle over `cases`
/// random shapes with 1 <= d <= n <= 64, 1 <= k <= 64 and |entries| <= 10.
pub fn conv_oracle_gap(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = r.gen_range(1..=64);
        let d = r.gen_range(1..=n);
        let k = r.gen_range(1..=64);
        let s = random_matrix(&mut r, n, k, 10.0);
        let m = random_matrix(&mut r, d, k, 10.0);
        let b = r.gen_range(-10.0..=10.0);
        let got = conv_valid(&s, &m, b).unwrap();
        if got.len() != n - d + 1 {
            return f64::INFINITY;
        }
        worst = worst.max(max_abs_diff(&got, &naive_conv(&s, &m, b)));
    }
    worst
}

/// Number of cases where `max_pool_argmax` disagrees with the oracle in
/// value or index. Half the cases draw small integers so ties are common.
pub fn max_pool_oracle_mismatches(seed: u64, cases: usize) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|case| {
            let len = r.gen_range(1..=40);
            let h: Vec<f64> = if case % 2 == 0 {
                (0..len).map(|_| r.gen_range(-3..=3) as f64).collect()
            } else {
                (0..len).map(|_| r.gen_range(-10.0..10.0)).collect()
            };
            max_pool_argmax(&h).unwrap() != naive_max_pool(&h)
        })
        .count()
}

pub fn affine_oracle_gap(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let rows = r.gen_range(1..=20);
        let cols = r.gen_range(1..=50);
        let w = random_matrix(&mut r, rows, cols, 10.0);
        let x: Vec<f64> = (0..cols).map(|_| r.gen_range(-10.0..=10.0)).collect();
        let b: Vec<f64> = (0..rows).map(|_| r.gen_range(-10.0..=10.0)).collect();
        worst = worst.max(max_abs_diff(&affine(&w, &x, &b).unwrap(), &naive_affine(&w, &x, &b)));
    }
    worst
}

/// Random model with 1..=3 channels, heights {1, 2}, independent filter
/// counts and random parameters, plus matching random inputs.
pub fn random_model(r: &mut ChaCha8Rng) -> (MultichannelCnn, Vec<Matrix>) {
    let k = r.gen_range(1..=10);
    let channels = r.gen_range(1..=3);
    let mut specs = Vec::new();
    for &c in &ChannelName::ALL[..channels] {
        specs.push(ChannelSpec::with_counts(c, k, r.gen_range(1..=6), r.gen_range(1..=6)));
    }
    let labels = (0..r.gen_range(1..=6)).map(|i| format!("v{i}")).collect();
    let mut model = MultichannelCnn::init(specs, labels, 0.0, r.gen()).unwrap();
    let params: Vec<f64> = (0..model.parameter_count()).map(|_| r.gen_range(-1.0..1.0)).collect();
    model.set_flat_parameters(&params).unwrap();
    let inputs = (0..channels)
        .map(|_| {
            let rows = r.gen_range(2..=12);
            random_matrix(r, rows, k, 3.0)
        })
        .collect();
    (model, inputs)
}

/// Largest deviation of inference-mode scores from [`naive_forward`].
pub fn forward_oracle_gap(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (model, inputs) = random_model(&mut r);
        let tms: Vec<_> = inputs.iter().cloned().map(token_matrix).collect();
        let refs: Vec<_> = tms.iter().collect();
        let (scores, _) = forward(&model, &refs, Mode::Infer).unwrap();
        let mats: Vec<&Matrix> = inputs.iter().collect();
        worst = worst.max(max_abs_diff(&scores.scores, &naive_forward(&model, &mats)));
    }
    worst
}
