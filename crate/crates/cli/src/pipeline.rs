//! The offline and online phases wired together, shared by the binary and the
//! acceptance suite.

use std::io::Write;
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use shiftwatch_core::icad::{calibrate, CalibrationTable, Detector, DetectionRecord, DetectorConfig, DetectorState};
use shiftwatch_core::scenario::{default_proper_size, split_proper_calibration, Episode, Frame, SceneConfig, ShiftKind};
use shiftwatch_core::vae::{train, ElboTerms, VaeRegressionModel};
use shiftwatch_core::Tensor;

use crate::config::RunConfig;
use crate::report::{EpisodeSet, EvalReport, TimingSummary};

/// Independent random streams derived from the master seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Dataset,
    Calibration,
    Episode(ShiftKind, u32),
    Detection(ShiftKind, u32),
}

fn kind_code(kind: &ShiftKind) -> u64 {
    match kind {
        ShiftKind::Nominal => 0,
        ShiftKind::Covariate { .. } => 1,
        ShiftKind::Target { .. } => 2,
        ShiftKind::LabelConcept { .. } => 3,
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let id = match stream {
        Stream::Dataset => 0,
        Stream::Calibration => 1,
        Stream::Episode(kind, index) => (2 << 40) | (kind_code(&kind) << 32) | u64::from(index),
        Stream::Detection(kind, index) => (3 << 40) | (kind_code(&kind) << 32) | u64::from(index),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct Dataset {
    pub proper: Vec<Frame>,
    pub calibration: Vec<Frame>,
}

fn images(frames: &[Frame]) -> Vec<Tensor> {
    frames.iter().map(|f| f.image.clone()).collect()
}

/// Generates and splits the training data. `training_shift` only matters for
/// target shift, whose model never sees the excluded band.
pub fn dataset(config: &RunConfig, training_shift: &ShiftKind) -> Result<Dataset> {
    let scene = training_shift.training_scene(&config.scene);
    let frames = scene.generate_dataset(config.dataset_size, &mut stream_rng(config.seed, Stream::Dataset))?;
    let (proper, calibration) = split_proper_calibration(frames, default_proper_size(config.dataset_size))?;
    Ok(Dataset { proper, calibration })
}

pub struct TrainedModel {
    pub model: VaeRegressionModel,
    pub history: Vec<ElboTerms>,
    /// Mean absolute error in meters on the calibration split.
    pub held_out_mae: f64,
}

pub fn mean_absolute_error(model: &VaeRegressionModel, frames: &[Frame]) -> Result<f64> {
    ensure!(!frames.is_empty(), "no frames to score");
    let mut total = 0.0;
    for f in frames {
        total += (model.predict(f.image.data())?.mean - f.distance).abs();
    }
    Ok(total / frames.len() as f64)
}

pub fn train_model(config: &RunConfig, data: &Dataset) -> Result<TrainedModel> {
    let labels: Vec<f64> = data.proper.iter().map(|f| f.distance).collect();
    let mut training = config.training.clone();
    training.seed = config.seed;
    let outcome = train(&images(&data.proper), &labels, &training)?;
    let held_out_mae = mean_absolute_error(&outcome.model, &data.calibration)?;
    Ok(TrainedModel {
        model: outcome.model,
        history: outcome.history,
        held_out_mae,
    })
}

pub fn check_model_fits(model: &VaeRegressionModel, scene: &SceneConfig) -> Result<()> {
    ensure!(
        model.input_dim() == scene.input_dim(),
        "model expects {} inputs but the scene renders {}x{}x{} = {} pixels",
        model.input_dim(),
        scene.height,
        scene.width,
        scene.channels,
        scene.input_dim()
    );
    Ok(())
}

pub fn calibrate_model(config: &RunConfig, model: &VaeRegressionModel, data: &Dataset, use_lrp: bool) -> Result<CalibrationTable> {
    check_model_fits(model, &config.scene)?;
    let mut rng = stream_rng(config.seed, Stream::Calibration);
    Ok(calibrate(model, &images(&data.calibration), use_lrp, &mut rng)?)
}

/// Episode `index` of the given kind, with `d0` and `v0` drawn from the configured ranges.
pub fn episode(config: &RunConfig, shift: &ShiftKind, index: u32) -> Result<Episode> {
    let mut rng = stream_rng(config.seed, Stream::Episode(*shift, index));
    let draw = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let d0 = draw(&mut rng, config.episodes.d0);
    let v0 = draw(&mut rng, config.episodes.v0);
    Ok(config.scene.generate_episode(shift, d0, v0, &mut rng)?)
}

pub fn check_consistent(table: &CalibrationTable, detector: &DetectorConfig) -> Result<()> {
    if table.use_lrp() != detector.use_lrp {
        let describe = |lrp: bool| if lrp { "with LRP weighting" } else { "without LRP weighting" };
        bail!(
            "calibration table was computed {} but detection was requested {}; recalibrate or change --no-lrp",
            describe(table.use_lrp()),
            describe(detector.use_lrp)
        );
    }
    Ok(())
}

pub struct DetectionRun {
    pub records: Vec<DetectionRecord>,
    pub first_alarm: Option<usize>,
    /// Wall-clock time of each detection step, in milliseconds.
    pub step_ms: Vec<f64>,
}

/// Runs a fresh detector over `frames`, timing every step.
pub fn detect_frames<R: Rng + ?Sized>(
    model: &VaeRegressionModel,
    table: &CalibrationTable,
    detector: &DetectorConfig,
    frames: &[Frame],
    rng: &mut R,
) -> Result<DetectionRun> {
    check_consistent(table, detector)?;
    ensure!(!frames.is_empty(), "episode has no frames");
    let detector = Detector::new(model, table, detector.clone())?;
    let mut state = DetectorState::new();
    let mut records = Vec::with_capacity(frames.len());
    let mut step_ms = Vec::with_capacity(frames.len());
    for frame in frames {
        let start = Instant::now();
        let (record, next) = detector.step(&frame.image, &state, rng)?;
        step_ms.push(start.elapsed().as_secs_f64() * 1e3);
        state = next;
        records.push(record);
    }
    let first_alarm = records.iter().position(|r| r.alarm);
    Ok(DetectionRun {
        records,
        first_alarm,
        step_ms,
    })
}

pub fn detect_episode(
    config: &RunConfig,
    model: &VaeRegressionModel,
    table: &CalibrationTable,
    episode: &Episode,
    index: u32,
) -> Result<DetectionRun> {
    let mut rng = stream_rng(config.seed, Stream::Detection(episode.shift, index));
    detect_frames(model, table, &config.detector, &episode.frames, &mut rng)
}

#[derive(Serialize)]
struct TraceRow {
    t: u64,
    true_distance: f64,
    predicted_distance: f64,
    abs_error: f64,
    p_min: f64,
    p_mean: f64,
    log_martingale: f64,
    cusum: f64,
    alarm: bool,
}

/// One CSV row per frame.
pub fn write_trace<W: Write>(out: W, episode: &Episode, run: &DetectionRun) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for (frame, record) in episode.frames.iter().zip(&run.records) {
        writer.serialize(TraceRow {
            t: record.t,
            true_distance: frame.distance,
            predicted_distance: record.predicted_distance,
            abs_error: (record.predicted_distance - frame.distance).abs(),
            p_min: record.p_min(),
            p_mean: record.p_mean(),
            log_martingale: record.log_martingale,
            cusum: record.cusum,
            alarm: record.alarm,
        })?;
    }
    writer.flush()?;
    Ok(())
}

fn run_set(
    config: &RunConfig,
    model: &VaeRegressionModel,
    table: &CalibrationTable,
    kind: &ShiftKind,
    count: u32,
    step_ms: &mut Vec<f64>,
) -> Result<EpisodeSet> {
    let mut first_alarms = Vec::with_capacity(count as usize);
    let mut frames = Vec::with_capacity(count as usize);
    for index in 0..count {
        let ep = episode(config, kind, index)?;
        let run = detect_episode(config, model, table, &ep, index)?;
        step_ms.extend(&run.step_ms);
        first_alarms.push(run.first_alarm);
        frames.push(ep.frames.len());
    }
    Ok(EpisodeSet {
        kind: kind.name().to_string(),
        episodes: count as usize,
        alarms: first_alarms.iter().filter(|a| a.is_some()).count(),
        first_alarms,
        frames,
    })
}

/// Runs `count` nominal and `count` shifted episodes.
///
/// For target shift the nominal set is skipped: the model was trained without
/// the excluded band, so every full-range episode carries the shift.
pub fn evaluate(
    config: &RunConfig,
    model: &VaeRegressionModel,
    table: &CalibrationTable,
    shift: &ShiftKind,
    count: u32,
) -> Result<EvalReport> {
    ensure!(count >= 1, "need at least one episode");
    check_model_fits(model, &config.scene)?;
    check_consistent(table, &config.detector)?;
    let mut step_ms = Vec::new();
    let nominal = match shift {
        ShiftKind::Target { .. } => None,
        _ => Some(run_set(config, model, table, &ShiftKind::Nominal, count, &mut step_ms)?),
    };
    let shifted = match shift {
        ShiftKind::Nominal => None,
        _ => Some(run_set(config, model, table, shift, count, &mut step_ms)?),
    };
    Ok(EvalReport {
        shift: shift.name().to_string(),
        seed: config.seed,
        detector: config.detector.clone(),
        false_positives: nominal.as_ref().map(|s| s.alarms),
        false_negatives: shifted.as_ref().map(|s| s.episodes - s.alarms),
        nominal,
        shifted,
        timing_ms: TimingSummary::from_samples(&step_ms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_repeatable() {
        let draw = |s| stream_rng(3, s).random::<u64>();
        let a = draw(Stream::Episode(ShiftKind::Nominal, 0));
        assert_eq!(a, draw(Stream::Episode(ShiftKind::Nominal, 0)));
        assert_ne!(a, draw(Stream::Episode(ShiftKind::Nominal, 1)));
        assert_ne!(a, draw(Stream::Episode(ShiftKind::covariate(), 0)));
        assert_ne!(a, draw(Stream::Detection(ShiftKind::Nominal, 0)));
        assert_ne!(draw(Stream::Dataset), draw(Stream::Calibration));
    }

    #[test]
    fn episodes_respect_sampling_ranges() {
        let config = RunConfig::default();
        for index in 0..20 {
            let ep = episode(&config, &ShiftKind::Nominal, index).unwrap();
            assert!((35.0..=50.0).contains(&ep.d0));
            assert!((5.0..=15.0).contains(&ep.v0));
        }
    }
}
