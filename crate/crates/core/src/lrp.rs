//! Epsilon-rule layer-wise relevance propagation and the grayscale relevance
//! map used to weight reconstruction errors.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{ActivationTrace, DenseNet};
use crate::tensor::Tensor;
use crate::vae::VaeRegressionModel;

/// Stabilizer added to every denominator, signed like the denominator.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Relevance at every layer boundary. `layers[0]` is the input, the last
/// entry is the seed placed on the network output.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRelevance {
    pub layers: Vec<Vec<f64>>,
}

impl LayerRelevance {
    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }
}

/// Propagates `seed` (relevance on each output unit) back to the input with
///
/// `R_j = a_j * sum_k w_kj R_k / (z_k + eps * sign(z_k))`
///
/// where `z_k` is the pre-activation of unit `k` including its bias.
pub fn lrp_epsilon_seeded(net: &DenseNet, trace: &ActivationTrace, seed: &[f64], epsilon: f64) -> Result<LayerRelevance> {
    if trace.batch_size() != 1 {
        return Err(Error::InvalidArgument("relevance needs a single-sample trace".into()));
    }
    check_len("relevance seed", net.output_dim(), seed.len())?;
    if trace.layer_count() != net.layers().len() {
        return Err(Error::StaleTrace("layer count differs".into()));
    }
    let mut relevance = Array1::from(seed.to_vec());
    let mut layers = vec![seed.to_vec()];
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let z = trace.pre_activation(k).row(0);
        let a = trace.layer_input(k).row(0);
        check_len("trace pre-activation", layer.output_dim(), z.len())?;
        check_len("trace layer input", layer.input_dim(), a.len())?;
        let mut ratio = Array1::zeros(z.len());
        for (j, (&zj, &rj)) in z.iter().zip(relevance.iter()).enumerate() {
            let denom = zj + epsilon * if zj >= 0.0 { 1.0 } else { -1.0 };
            if denom == 0.0 {
                if rj != 0.0 {
                    return Err(Error::ZeroDenominator { layer: k });
                }
                continue;
            }
            ratio[j] = rj / denom;
        }
        relevance = layer.weights().t().dot(&ratio) * &a;
        layers.push(relevance.to_vec());
    }
    layers.reverse();
    Ok(LayerRelevance { layers })
}

/// Relevance seeded with the value of the first output unit (the regressor's
/// mean head); other outputs get no relevance.
pub fn lrp_epsilon(net: &DenseNet, trace: &ActivationTrace, epsilon: f64) -> Result<LayerRelevance> {
    let mut seed = vec![0.0; net.output_dim()];
    seed[0] = trace.output()[0];
    lrp_epsilon_seeded(net, trace, &seed, epsilon)
}

/// Per-pixel weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RelevanceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_len("relevance map", height * width, values.len())?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("relevance values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, values })
    }

    /// All-ones map; weighting by it reproduces the plain reconstruction MSE.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Rows of comma-separated values.
    pub fn to_csv(&self) -> String {
        self.values
            .chunks(self.width)
            .map(|row| row.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

/// Channel-sum, clamp negatives, divide by the maximum. Falls back to the
/// all-ones map when nothing is positive.
pub fn grayscale_map(relevance: &Tensor) -> Result<RelevanceMap> {
    let &[h, w, c] = relevance.shape() else {
        return Err(Error::InvalidArgument(format!(
            "relevance must be shaped [H, W, C], got {:?}",
            relevance.shape()
        )));
    };
    let summed: Vec<f64> = relevance
        .data()
        .chunks(c.max(1))
        .map(|px| px.iter().sum::<f64>().max(0.0))
        .collect();
    debug_assert_eq!(summed.len(), h * w);
    let max = summed.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Ok(RelevanceMap::uniform(h, w));
    }
    let values = summed.into_iter().map(|v| v / max).collect();
    Ok(RelevanceMap { height: h, width: w, values })
}

/// Relevance of each pixel of `x` for the model's predicted distance.
///
/// The seed is the predicted mean in label units, so the input relevance sums
/// to roughly the predicted distance and positive values mark the pixels that
/// support it.
pub fn relevance_map(model: &VaeRegressionModel, x: &Tensor) -> Result<RelevanceMap> {
    let trace = model.regressor().forward(x.data())?;
    let mut seed = vec![0.0; model.regressor().output_dim()];
    seed[0] = model.labels().destandardize(trace.output()[0]);
    let relevance = lrp_epsilon_seeded(model.regressor(), &trace, &seed, DEFAULT_EPSILON)?;
    grayscale_map(&Tensor::new(x.shape().to_vec(), relevance.input().to_vec())?)
}
