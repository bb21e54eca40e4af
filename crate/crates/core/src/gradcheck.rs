//! Finite-difference verification of the full-loss gradient on random tiny
//! models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::TokenMatrix;
use crate::error::Result;
use crate::model::{backward, forward, loss, ChannelName, ChannelSpec, Mode, MultichannelCnn};
use crate::numkit::{central_differences, relative_error, Matrix};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Rounding error of one loss evaluation, in units of `EPSILON * |loss|`.
/// Two evaluations feed each central difference.
pub const GRADCHECK_ROUNDOFF_ULPS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub seed: u64,
    pub embedding_dim: usize,
    pub channels: usize,
    pub filters_h1: usize,
    pub filters_h2: usize,
    pub labels: usize,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub parameters: usize,
    pub loss: f64,
    /// Largest relative error over every parameter.
    pub max_relative_error: f64,
    /// Tensor and element index of the parameter with that error.
    pub worst_tensor: String,
    /// Smallest absolute difference a central difference can resolve at
    /// this loss: `2 * ULPS * EPSILON * max(|loss|, 1) / (2 * step)`.
    pub resolution: f64,
    /// Parameters over the relative tolerance whose absolute error is within
    /// `resolution`; their gradients are too small to compare relatively.
    pub below_resolution: usize,
    /// Parameters over the relative tolerance and above `resolution`.
    pub failing: usize,
}

impl GradcheckCase {
    pub fn passed(&self) -> bool {
        self.failing == 0
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TokenMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TokenMatrix {
        tokens: Vec::new(),
        matrix: Matrix::new(rows, cols, data).expect("shape"),
        oov_count: 0,
    }
}

/// Builds a random model (embedding dim 2..=8, 1..=4 filters per height,
/// 1..=5 labels, 1..=3 channels, random dropout mask) with every parameter
/// drawn from U(-0.5, 0.5), and compares the backward pass against central
/// differences of the loss with the dropout mask held fixed.
///
/// A parameter passes when its relative error is below
/// [`GRADCHECK_TOLERANCE`], or when its absolute error is within the
/// rounding resolution of the difference quotient. The second case covers
/// gradients near 1e-8, whose exact finite difference is lost to the
/// rounding of a loss near 1.
pub fn check_random_model(seed: u64) -> Result<GradcheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=8);
    let channels = rng.gen_range(1..=3);
    let filters_h1 = rng.gen_range(1..=4);
    let filters_h2 = rng.gen_range(1..=4);
    let labels = rng.gen_range(1..=5);
    let dropout_rate = if rng.gen_bool(0.5) { rng.gen_range(0.1..0.6) } else { 0.0 };
    let l2_coeff = if rng.gen_bool(0.5) { 0.0005 } else { rng.gen_range(0.0..0.05) };
    let specs: Vec<ChannelSpec> = ChannelName::ALL[..channels]
        .iter()
        .map(|&name| ChannelSpec::with_counts(name, k, filters_h1, filters_h2))
        .collect();
    let label_names = (0..labels).map(|i| format!("v{i}")).collect();
    let mut model = MultichannelCnn::init(specs, label_names, dropout_rate, rng.gen())?;
    let params: Vec<f64> = (0..model.parameter_count()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    model.set_flat_parameters(&params)?;
    let inputs: Vec<TokenMatrix> = (0..channels)
        .map(|_| {
            let rows = rng.gen_range(2..=7);
            random_matrix(&mut rng, rows, k)
        })
        .collect();
    let refs: Vec<&TokenMatrix> = inputs.iter().collect();
    let gold: Vec<f64> = (0..labels).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mode = Mode::Train { seed: rng.gen() };

    let (_, cache) = forward(&model, &refs, mode)?;
    let analytic = backward(&model, &cache, &gold, l2_coeff)?.flatten();
    let mut probe = model.clone();
    let numeric = central_differences(
        |x| {
            probe.set_flat_parameters(x).expect("length checked");
            let (s, _) = forward(&probe, &refs, mode).expect("inputs checked");
            loss(&s, &gold, &probe, l2_coeff).expect("lengths checked")
        },
        &params,
        GRADCHECK_STEP,
    )?;
    let (scores, _) = forward(&model, &refs, mode)?;
    let base_loss = loss(&scores, &gold, &model, l2_coeff)?;
    let resolution = GRADCHECK_ROUNDOFF_ULPS * f64::EPSILON * base_loss.abs().max(1.0) / GRADCHECK_STEP;
    let (mut below_resolution, mut failing) = (0, 0);
    for (&a, &n) in analytic.iter().zip(&numeric) {
        if relative_error(a, n) >= GRADCHECK_TOLERANCE {
            if (a - n).abs() <= resolution {
                below_resolution += 1;
            } else {
                failing += 1;
            }
        }
    }
    let (worst, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    let mut offset = 0;
    let mut worst_tensor = String::new();
    for (info, t) in model.tensor_infos().iter().zip(model.tensors()) {
        if worst < offset + t.len() {
            worst_tensor = format!("{}[{}]", info.name, worst - offset);
            break;
        }
        offset += t.len();
    }
    Ok(GradcheckCase {
        seed,
        embedding_dim: k,
        channels,
        filters_h1,
        filters_h2,
        labels,
        dropout_rate,
        l2_coeff,
        parameters: params.len(),
        loss: base_loss,
        max_relative_error,
        worst_tensor,
        resolution,
        below_resolution,
        failing,
    })
}

/// Runs `count` cases with seeds derived from `seed`.
pub fn check_many(seed: u64, count: usize) -> Result<Vec<GradcheckCase>> {
    (0..count as u64)
        .map(|i| check_random_model(crate::trainer::derive_seed(seed, &[i])))
        .collect()
}
