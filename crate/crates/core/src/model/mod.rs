//! The multichannel text CNN.
//!
//! Each channel owns one filter bank per filter height. A filter of height
//! `d` is stored as one row of `d * k` values (the `d x k` filter flattened
//! row-major), so sliding it over an `n x k` token matrix is a dot product
//! with the contiguous window of rows `t..t + d`. Every filter is convolved,
//! rectified and max-pooled to one feature; the features of all banks of all
//! channels are concatenated (channels in declaration order, heights
//! ascending, filters in order), passed through inverted dropout in training
//! mode, and mapped to one sigmoid score per label.

mod channels;
mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::TokenMatrix;
use crate::error::{Error, Result};
use crate::numkit::{self, Matrix, PooledFeature};

pub use channels::{ChannelName, ChannelSpec, EmbeddingSet};
pub use checkpoint::{
    load_manifest, load_model, save_model, save_model_with_metadata, Manifest, ManifestChannel, TensorEntry,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION, MANIFEST_FILE,
};

/// Output bias of an always-empty model; its scores sit near 4e-18.
pub const ALWAYS_EMPTY_BIAS: f64 = -40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub height: usize,
    /// One flattened `height x k` filter per row.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biases.is_empty()
    }

    /// Filter `i` reshaped to `height x k`.
    pub fn filter(&self, i: usize) -> Matrix {
        let k = self.weights.cols() / self.height;
        Matrix::new(self.height, k, self.weights.row(i).to_vec()).expect("filter shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub spec: ChannelSpec,
    pub banks: Vec<FilterBank>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelCnn {
    pub channels: Vec<Channel>,
    /// `labels x features`.
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
    pub dropout_rate: f64,
    pub labels: Vec<String>,
    /// Set on placeholder models for slots without training positives.
    pub always_empty: bool,
}

/// Name, shape and weight-decay flag of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

/// Parameter-shaped gradient buffers, in [`MultichannelCnn::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MultichannelCnn) -> Self {
        Self {
            tensors: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.concat()
    }
}

/// Sigmoid scores together with the logits they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let scores = numkit::sigmoid(&logits);
        Self { logits, scores }
    }

    /// Scores must lie in (0, 1).
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let logits = scores.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
        Self { logits, scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; the mask is a function of the seed.
    Train { seed: u64 },
    Infer,
}

/// Forward state needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<'a> {
    inputs: Vec<&'a Matrix>,
    pooled: Vec<PooledFeature>,
    /// Per-feature dropout multiplier (0 or 1/keep); `None` when no dropout.
    mask: Option<Vec<f64>>,
    hidden: Vec<f64>,
    scores: ScoreVector,
}

impl ForwardCache<'_> {
    pub fn pooled_values(&self) -> Vec<f64> {
        self.pooled.iter().map(|p| p.value).collect()
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl MultichannelCnn {
    /// Glorot-uniform filters and output weights, zero biases. Filter fan-in
    /// is the window size `d * k` and fan-out the bank's filter count.
    pub fn init(specs: Vec<ChannelSpec>, labels: Vec<String>, dropout_rate: f64, seed: u64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one label".into()));
        }
        if specs.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one channel".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let k = spec.embedding_dim;
            let banks = spec
                .filter_heights
                .iter()
                .zip(&spec.filter_counts)
                .map(|(&height, &count)| FilterBank {
                    height,
                    weights: Matrix::new(count, height * k, glorot(&mut rng, height * k, count, count * height * k))
                        .expect("bank shape"),
                    biases: vec![0.0; count],
                })
                .collect();
            channels.push(Channel { spec, banks });
        }
        let features: usize = channels.iter().map(|c| c.spec.feature_count()).sum();
        let output_weights = Matrix::new(
            labels.len(),
            features,
            glorot(&mut rng, features, labels.len(), labels.len() * features),
        )
        .expect("output shape");
        Ok(Self {
            channels,
            output_weights,
            output_bias: vec![0.0; labels.len()],
            dropout_rate,
            labels,
            always_empty: false,
        })
    }

    /// Placeholder that never predicts a value: no filters, zero output
    /// weights and a strongly negative output bias.
    pub fn always_empty(specs: Vec<ChannelSpec>, labels: Vec<String>) -> Result<Self> {
        let specs = specs.iter().map(|s| s.with_uniform_count(0)).collect();
        let mut model = Self::init(specs, labels, 0.0, 0)?;
        model.output_bias.iter_mut().for_each(|b| *b = ALWAYS_EMPTY_BIAS);
        model.always_empty = true;
        Ok(model)
    }

    pub fn specs(&self) -> Vec<ChannelSpec> {
        self.channels.iter().map(|c| c.spec.clone()).collect()
    }

    pub fn feature_len(&self) -> usize {
        self.output_weights.cols()
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for ch in &self.channels {
            for bank in &ch.banks {
                out.push(TensorInfo {
                    name: format!("{}.h{}.weight", ch.spec.name, bank.height),
                    shape: vec![bank.weights.rows(), bank.height, ch.spec.embedding_dim],
                    decay: true,
                });
                out.push(TensorInfo {
                    name: format!("{}.h{}.bias", ch.spec.name, bank.height),
                    shape: vec![bank.len()],
                    decay: false,
                });
            }
        }
        out.push(TensorInfo {
            name: "output.weight".into(),
            shape: vec![self.output_weights.rows(), self.output_weights.cols()],
            decay: true,
        });
        out.push(TensorInfo {
            name: "output.bias".into(),
            shape: vec![self.output_bias.len()],
            decay: false,
        });
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for bank in self.channels.iter().flat_map(|c| &c.banks) {
            out.push(bank.weights.data());
            out.push(&bank.biases);
        }
        out.push(self.output_weights.data());
        out.push(&self.output_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for bank in self.channels.iter_mut().flat_map(|c| &mut c.banks) {
            out.push(bank.weights.data_mut());
            out.push(&mut bank.biases);
        }
        out.push(self.output_weights.data_mut());
        out.push(&mut self.output_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites all parameters from a flat vector in tensor order.
    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::mismatch("set_flat_parameters", self.parameter_count(), flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `Σ w²` over the weight tensors (biases excluded).
    pub fn l2_penalty(&self) -> f64 {
        self.tensor_infos()
            .iter()
            .zip(self.tensors())
            .filter(|(info, _)| info.decay)
            .map(|(_, t)| t.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Values whose score is strictly above `threshold`, in label order.
    pub fn predict_labels(&self, scores: &ScoreVector, threshold: f64) -> Vec<String> {
        predict_labels(&scores.scores, &self.labels, threshold)
    }
}

/// Labels whose score is strictly above `threshold`, in label order.
pub fn predict_labels(scores: &[f64], labels: &[String], threshold: f64) -> Vec<String> {
    scores
        .iter()
        .zip(labels)
        .filter(|(&s, _)| s > threshold)
        .map(|(_, l)| l.clone())
        .collect()
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

/// Runs the network on one token matrix per channel.
pub fn forward<'a>(
    model: &MultichannelCnn,
    inputs: &[&'a TokenMatrix],
    mode: Mode,
) -> Result<(ScoreVector, ForwardCache<'a>)> {
    if inputs.len() != model.channels.len() {
        return Err(Error::mismatch("forward", format!("{} channel inputs", model.channels.len()), inputs.len()));
    }
    let mut pooled = Vec::with_capacity(model.feature_len());
    for (ch, input) in model.channels.iter().zip(inputs) {
        let s = &input.matrix;
        if s.cols() != ch.spec.embedding_dim {
            return Err(Error::mismatch(
                "forward",
                format!("{} embedding dim {}", ch.spec.name, ch.spec.embedding_dim),
                s.cols(),
            ));
        }
        if s.rows() < ch.spec.max_height() {
            return Err(Error::mismatch(
                "forward",
                format!("{} input with at least {} rows", ch.spec.name, ch.spec.max_height()),
                s.rows(),
            ));
        }
        for bank in &ch.banks {
            for f in 0..bank.len() {
                pooled.push(numkit::pooled_feature(s, bank.weights.row(f), bank.height, bank.biases[f])?);
            }
        }
    }
    let features: Vec<f64> = pooled.iter().map(|p| p.value).collect();
    let mask = match mode {
        Mode::Train { seed } if model.dropout_rate > 0.0 => Some(dropout_mask(features.len(), model.dropout_rate, seed)),
        _ => None,
    };
    let hidden = match &mask {
        Some(m) => features.iter().zip(m).map(|(x, m)| x * m).collect(),
        None => features,
    };
    let logits = numkit::affine(&model.output_weights, &hidden, &model.output_bias)?;
    let scores = ScoreVector::from_logits(logits);
    let cache = ForwardCache {
        inputs: inputs.iter().map(|t| &t.matrix).collect(),
        pooled,
        mask,
        hidden,
        scores: scores.clone(),
    };
    Ok((scores, cache))
}

/// Inference-mode scores.
pub fn predict_scores(model: &MultichannelCnn, inputs: &[&TokenMatrix]) -> Result<ScoreVector> {
    forward(model, inputs, Mode::Infer).map(|(s, _)| s)
}

fn bce_from_logit(z: f64, g: f64) -> f64 {
    z.max(0.0) - z * g + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over labels plus `l2_coeff * Σ w²` over the
/// weight tensors. Computed from logits so saturated scores stay finite.
pub fn loss(scores: &ScoreVector, gold: &[f64], model: &MultichannelCnn, l2_coeff: f64) -> Result<f64> {
    if gold.len() != scores.len() {
        return Err(Error::mismatch("loss", format!("{} gold values", scores.len()), gold.len()));
    }
    let data = scores
        .logits
        .iter()
        .zip(gold)
        .map(|(&z, &g)| bce_from_logit(z, g))
        .sum::<f64>()
        / gold.len() as f64;
    let penalty = if l2_coeff == 0.0 { 0.0 } else { l2_coeff * model.l2_penalty() };
    Ok(data + penalty)
}

/// Adds the gradient of `l2_coeff * Σ w²` to `grads`.
pub fn add_l2_gradient(model: &MultichannelCnn, grads: &mut Gradients, l2_coeff: f64) {
    if l2_coeff == 0.0 {
        return;
    }
    for ((info, params), g) in model.tensor_infos().iter().zip(model.tensors()).zip(&mut grads.tensors) {
        if info.decay {
            for (gi, w) in g.iter_mut().zip(params) {
                *gi += 2.0 * l2_coeff * w;
            }
        }
    }
}

/// Exact gradient of [`loss`] with the cached dropout mask held fixed.
/// Embeddings are frozen and get no gradient.
pub fn backward(
    model: &MultichannelCnn,
    cache: &ForwardCache<'_>,
    gold: &[f64],
    l2_coeff: f64,
) -> Result<Gradients> {
    let labels = model.label_count();
    if cache.pooled.len() != model.feature_len()
        || cache.scores.len() != labels
        || cache.inputs.len() != model.channels.len()
    {
        return Err(Error::InvalidArgument("forward cache does not match this model".into()));
    }
    if gold.len() != labels {
        return Err(Error::mismatch("backward", format!("{labels} gold values"), gold.len()));
    }
    let mut grads = Gradients::zeros_like(model);
    let out_w = grads.tensors.len() - 2;

    let dlogits: Vec<f64> = cache
        .scores
        .scores
        .iter()
        .zip(gold)
        .map(|(y, g)| (y - g) / labels as f64)
        .collect();
    let features = model.feature_len();
    let mut dhidden = vec![0.0; features];
    for (l, &dz) in dlogits.iter().enumerate() {
        let row = model.output_weights.row(l);
        let grow = &mut grads.tensors[out_w][l * features..(l + 1) * features];
        for m in 0..features {
            grow[m] = dz * cache.hidden[m];
            dhidden[m] += dz * row[m];
        }
    }
    grads.tensors[out_w + 1].copy_from_slice(&dlogits);

    if let Some(mask) = &cache.mask {
        dhidden.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }

    let mut feature = 0;
    let mut tensor = 0;
    for (ch, input) in model.channels.iter().zip(&cache.inputs) {
        for bank in &ch.banks {
            let width = bank.weights.cols();
            let (w_grad, rest) = grads.tensors[tensor..].split_at_mut(1);
            let b_grad = &mut rest[0];
            for f in 0..bank.len() {
                let p = cache.pooled[feature];
                let d = dhidden[feature];
                feature += 1;
                if !p.active || d == 0.0 {
                    continue;
                }
                let window = input.window(p.index, bank.height);
                let g = &mut w_grad[0][f * width..(f + 1) * width];
                for (gi, x) in g.iter_mut().zip(window) {
                    *gi += d * x;
                }
                b_grad[f] += d;
            }
            tensor += 2;
        }
    }
    add_l2_gradient(model, &mut grads, l2_coeff);
    Ok(grads)
}
