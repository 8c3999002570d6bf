//! Inductive conformal anomaly detection over VAE reconstructions.
//!
//! Offline, every calibration image gets one reconstruction and one
//! (optionally relevance-weighted) nonconformity score; the sorted scores form
//! the [`CalibrationTable`]. Online, each frame gets `N` reconstructions, `N`
//! p-values, a simple-mixture log-martingale, and a CUSUM update.

mod calibration;
mod cusum;
mod martingale;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::{relevance_map, RelevanceMap};
use crate::tensor::Tensor;
use crate::vae::VaeRegressionModel;

pub use calibration::{calibrate, read_calibration, write_calibration, CalibrationTable, CALIBRATION_MAGIC};
pub use cusum::{cusum_update, DetectorState};
pub use martingale::{log_simple_mixture, DEFAULT_QUADRATURE_NODES};

fn image_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidArgument(format!(
            "images must be shaped [H, W, C], got {:?}",
            x.shape()
        ))),
    }
}

/// Sum over pixels of `weight * Σ_channels (x - r)²`, accumulated per pixel so
/// that unit weights reproduce the plain error bit for bit.
fn weighted_squared_error(x: &[f64], r: &[f64], channels: usize, weights: impl Iterator<Item = f64>) -> f64 {
    x.chunks(channels)
        .zip(r.chunks(channels))
        .zip(weights)
        .map(|((xs, rs), weight)| weight * xs.iter().zip(rs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

fn check_same_shape(x: &Tensor, reconstruction: &Tensor) -> Result<()> {
    if x.shape() == reconstruction.shape() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "reconstruction shape {:?} differs from input {:?}",
            reconstruction.shape(),
            x.shape()
        )))
    }
}

/// Mean squared reconstruction error over all elements.
pub fn nonconformity_vae(x: &Tensor, reconstruction: &Tensor) -> Result<f64> {
    check_same_shape(x, reconstruction)?;
    let channels = match *x.shape() {
        [_, _, c] if c > 0 => c,
        _ => 1,
    };
    let total = weighted_squared_error(x.data(), reconstruction.data(), channels, std::iter::repeat(1.0));
    Ok(total / x.len() as f64)
}

/// Reconstruction error weighted per pixel by `relevance`; each pixel's weight
/// applies to all of its channels. Normalized by `H * W * C`.
pub fn nonconformity_vae_lrp(x: &Tensor, reconstruction: &Tensor, relevance: &RelevanceMap) -> Result<f64> {
    check_same_shape(x, reconstruction)?;
    let (h, w, c) = image_dims(x)?;
    if relevance.height() != h || relevance.width() != w {
        return Err(Error::InvalidArgument(format!(
            "relevance map {}x{} does not match image {h}x{w}",
            relevance.height(),
            relevance.width()
        )));
    }
    let total = weighted_squared_error(x.data(), reconstruction.data(), c, relevance.values().iter().copied());
    Ok(total / (h * w * c) as f64)
}

/// The weighting map for `x`: LRP relevance when enabled, otherwise all ones.
pub fn weighting_map(model: &VaeRegressionModel, x: &Tensor, use_lrp: bool) -> Result<RelevanceMap> {
    if use_lrp {
        relevance_map(model, x)
    } else {
        let (h, w, _) = image_dims(x)?;
        Ok(RelevanceMap::uniform(h, w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Reconstructions per frame.
    pub samples: usize,
    /// CUSUM drift.
    pub delta: f64,
    /// Alarm threshold on the CUSUM statistic.
    pub tau: f64,
    pub use_lrp: bool,
    pub quadrature_nodes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            delta: 4.0,
            tau: 40.0,
            use_lrp: true,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidArgument("detector needs at least one sample per frame".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument("CUSUM drift must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument("alarm threshold must be positive".into()));
        }
        if self.quadrature_nodes < 64 {
            return Err(Error::InvalidArgument("use at least 64 quadrature nodes".into()));
        }
        Ok(())
    }
}

/// Everything computed for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub t: u64,
    pub predicted_distance: f64,
    pub scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_martingale: f64,
    pub cusum: f64,
    pub alarm: bool,
}

impl DetectionRecord {
    pub fn p_min(&self) -> f64 {
        self.p_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn p_mean(&self) -> f64 {
        self.p_values.iter().sum::<f64>() / self.p_values.len() as f64
    }
}

/// Online detector bound to a trained model and its calibration table.
#[derive(Clone, Debug)]
pub struct Detector<'a> {
    model: &'a VaeRegressionModel,
    table: &'a CalibrationTable,
    config: DetectorConfig,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a VaeRegressionModel, table: &'a CalibrationTable, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, table, config })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Scores `x` against the calibration table and advances `state`.
    pub fn step<R: Rng + ?Sized>(&self, x: &Tensor, state: &DetectorState, rng: &mut R) -> Result<(DetectionRecord, DetectorState)> {
        let weights = weighting_map(self.model, x, self.config.use_lrp)?;
        let reconstructions = self.model.reconstruct_samples(x, self.config.samples, rng)?;
        let scores = reconstructions
            .iter()
            .map(|r| nonconformity_vae_lrp(x, r, &weights))
            .collect::<Result<Vec<_>>>()?;
        let p_values: Vec<f64> = scores.iter().map(|&s| self.table.p_value(s)).collect();
        let log_martingale = log_simple_mixture(&p_values, self.config.quadrature_nodes)?;
        let next = cusum_update(state, log_martingale, self.config.delta);
        let predicted_distance = self.model.predict(x.data())?.mean;
        Ok((
            DetectionRecord {
                t: next.t,
                predicted_distance,
                scores,
                p_values,
                log_martingale,
                cusum: next.cusum,
                alarm: next.cusum > self.config.tau,
            },
            next,
        ))
    }

    /// Runs a fresh detector state over a frame sequence.
    pub fn run_episode<R: Rng + ?Sized>(&self, frames: &[Tensor], rng: &mut R) -> Result<EpisodeOutcome> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("episode has no frames".into()));
        }
        let mut state = DetectorState::new();
        let mut records = Vec::with_capacity(frames.len());
        for x in frames {
            let (record, next) = self.step(x, &state, rng)?;
            state = next;
            records.push(record);
        }
        let first_alarm = records.iter().position(|r| r.alarm);
        Ok(EpisodeOutcome { records, first_alarm })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub records: Vec<DetectionRecord>,
    /// Index of the first alarming frame.
    pub first_alarm: Option<usize>,
}

impl EpisodeOutcome {
    pub fn alarm(&self) -> bool {
        self.first_alarm.is_some()
    }
}
