use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{standardize_labels, Architecture, ElboTerms, LossNoise, LossWeights, VaeGradients, VaeRegressionModel};
use crate::error::{check_len, Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub latent_dim: usize,
    /// Weight of the Gaussian label log-likelihood term.
    pub supervised_weight: f64,
    /// Weight of the reconstruction MSE; `None` means the input dimension.
    pub recon_weight: Option<f64>,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            latent_dim: 16,
            supervised_weight: 1.0,
            recon_weight: None,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("training config: {what} must be positive")));
        if self.batch_size == 0 {
            return bad("batch size");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate");
        }
        if self.latent_dim == 0 {
            return bad("latent dimension");
        }
        if !(self.supervised_weight > 0.0) {
            return bad("supervised weight");
        }
        if matches!(self.recon_weight, Some(w) if !(w > 0.0)) {
            return bad("reconstruction weight");
        }
        Ok(())
    }
}

pub struct TrainingOutcome {
    pub model: VaeRegressionModel,
    /// Batch-averaged loss terms, one entry per epoch.
    pub history: Vec<ElboTerms>,
}

/// Trains a VAE-for-regression model on images with raw (unstandardized) labels.
///
/// Everything random (initialization, shuffling, reparameterization noise)
/// comes from one stream seeded by `config.seed`.
pub fn train(images: &[Tensor], labels: &[f64], config: &TrainingConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    check_len("training labels", images.len(), labels.len())?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let dim = images[0].len();
    for img in images {
        check_len("training image", dim, img.len())?;
    }
    let scaling = standardize_labels(labels)?;
    let targets: Vec<f64> = labels.iter().map(|&y| scaling.standardize(y)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = VaeRegressionModel::init(dim, config.latent_dim, &config.architecture, scaling, &mut rng)?;
    let weights = LossWeights {
        recon: config.recon_weight.unwrap_or(dim as f64),
        supervised: config.supervised_weight,
    };
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let mut grads = VaeGradients::zeros_for(&model);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = ElboTerms::default();
        for chunk in order.chunks(config.batch_size) {
            let mut xs = Array2::zeros((chunk.len(), dim));
            for (row, &i) in chunk.iter().enumerate() {
                xs.row_mut(row).assign(&ndarray::ArrayView1::from(images[i].data()));
            }
            let ys: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let noise = LossNoise::draw(chunk.len(), config.latent_dim, &mut rng);
            grads.fill_zero();
            let terms = model
                .batch_loss(xs.view(), &ys, &noise, weights, Some(&mut grads))
                .map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
            if !grads.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut model.parameters_mut(), &grads.slices())?;
            let share = chunk.len() as f64 / images.len() as f64;
            epoch_terms.kl_c += terms.kl_c * share;
            epoch_terms.recon_mse += terms.recon_mse * share;
            epoch_terms.kl_z += terms.kl_z * share;
            epoch_terms.label_nll += terms.label_nll * share;
            epoch_terms.total += terms.total * share;
        }
        history.push(epoch_terms);
    }
    Ok(TrainingOutcome { model, history })
}
