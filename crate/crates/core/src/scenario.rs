//! Synthetic braking-approach scenes: a centered square obstacle whose size
//! shrinks with distance, plus Gaussian pixel noise standing in for weather.
//!
//! Shift injectors:
//! - covariate: noise intensity drawn from a band never seen in training;
//! - target: training labels exclude a distance band, test episodes span it;
//! - label concept: the obstacle is rescaled, so the size-to-distance law changes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_DISTANCE: f64 = 50.0;
pub const MAX_NOISE_INTENSITY: f64 = 100.0;
/// Obstacle side in pixels at distance 0 and scale 1.
pub const NEAR_OBSTACLE_SIDE: f64 = 24.0;
/// Distance (m) at which the obstacle side halves.
pub const HALVING_DISTANCE: f64 = 5.0;
/// Sampling period of the braking system, 50 ms.
pub const DEFAULT_SAMPLING_PERIOD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub obstacle_scale: f64,
    /// Noise intensity band; pixel noise standard deviation is intensity / 100.
    pub noise_range: [f64; 2],
    pub distance_range: [f64; 2],
    /// Labels inside this band are never generated for training.
    pub excluded_band: Option<[f64; 2]>,
    pub sampling_period: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 1,
            obstacle_scale: 1.0,
            noise_range: [0.0, 20.0],
            distance_range: [0.0, MAX_DISTANCE],
            excluded_band: None,
            sampling_period: DEFAULT_SAMPLING_PERIOD,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(invalid(format!("image must be at least 8x8, got {}x{}", self.height, self.width)));
        }
        if self.channels == 0 {
            return Err(invalid("channels must be positive"));
        }
        if !(self.obstacle_scale > 0.0 && self.obstacle_scale.is_finite()) {
            return Err(invalid("obstacle scale must be positive"));
        }
        let [lo, hi] = self.noise_range;
        if !(0.0 <= lo && lo <= hi && hi <= MAX_NOISE_INTENSITY) {
            return Err(invalid(format!("noise range [{lo}, {hi}] outside [0, 100]")));
        }
        let [dlo, dhi] = self.distance_range;
        if !(0.0 <= dlo && dlo < dhi && dhi <= MAX_DISTANCE) {
            return Err(invalid(format!("distance range [{dlo}, {dhi}] outside [0, 50]")));
        }
        if let Some([a, b]) = self.excluded_band {
            if !(dlo <= a && a <= b && b <= dhi) {
                return Err(invalid(format!("excluded band [{a}, {b}] outside the distance range")));
            }
            if b - a >= dhi - dlo {
                return Err(invalid("excluded band covers the whole distance range"));
            }
        }
        if !(self.sampling_period > 0.0 && self.sampling_period.is_finite()) {
            return Err(invalid("sampling period must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }

    /// Renders one frame: black background, white centered square, additive
    /// Gaussian noise with std `noise_intensity / 100`, clamped to `[0, 1]`.
    pub fn render_frame<R: Rng + ?Sized>(
        &self,
        distance: f64,
        noise_intensity: f64,
        scale: f64,
        rng: &mut R,
    ) -> Result<Frame> {
        if !(0.0..=MAX_DISTANCE).contains(&distance) {
            return Err(invalid(format!("distance {distance} outside [0, 50]")));
        }
        if !(0.0..=MAX_NOISE_INTENSITY).contains(&noise_intensity) {
            return Err(invalid(format!("noise intensity {noise_intensity} outside [0, 100]")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("scale {scale} must be positive")));
        }
        let (h, w, c) = (self.height, self.width, self.channels);
        let side = obstacle_side(distance, scale);
        let rows = centered_span(h, side);
        let cols = centered_span(w, side);
        let sigma = noise_intensity / 100.0;
        let mut data = vec![0.0; h * w * c];
        for row in 0..h {
            for col in 0..w {
                let base = if rows.contains(&row) && cols.contains(&col) { 1.0 } else { 0.0 };
                for ch in 0..c {
                    let noise: f64 = rng.sample(StandardNormal);
                    data[(row * w + col) * c + ch] = (base + sigma * noise).clamp(0.0, 1.0);
                }
            }
        }
        Ok(Frame {
            image: Tensor::new(self.image_shape(), data)?,
            distance,
        })
    }

    /// Draws a distance uniformly from the distance range minus the excluded band.
    fn sample_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let [lo, hi] = self.distance_range;
        match self.excluded_band {
            None => rng.random_range(lo..=hi),
            Some([a, b]) => {
                let d = lo + rng.random_range(0.0..=(hi - lo) - (b - a));
                // The band is open at both ends: its endpoints stay admissible.
                if d > a {
                    d + (b - a)
                } else {
                    d
                }
            }
        }
    }

    fn sample_noise<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
        if range[0] == range[1] {
            range[0]
        } else {
            rng.random_range(range[0]..=range[1])
        }
    }

    /// Labeled training frames.
    pub fn generate_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Frame>> {
        self.validate()?;
        if n == 0 {
            return Err(invalid("dataset size must be at least 1"));
        }
        (0..n)
            .map(|_| {
                let distance = self.sample_distance(rng);
                let noise = Self::sample_noise(self.noise_range, rng);
                self.render_frame(distance, noise, self.obstacle_scale, rng)
            })
            .collect()
    }

    /// One approach from `d0` at closing speed `v0`, sampled every `sampling_period`.
    ///
    /// The noise intensity is drawn per frame from the band the shift kind selects.
    pub fn generate_episode<R: Rng + ?Sized>(&self, shift: &ShiftKind, d0: f64, v0: f64, rng: &mut R) -> Result<Episode> {
        self.validate()?;
        if !(d0 > 0.0 && d0 <= MAX_DISTANCE) {
            return Err(invalid(format!("initial distance {d0} outside (0, 50]")));
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(invalid(format!("closing speed {v0} must be positive")));
        }
        shift.validate()?;
        let (noise_range, scale) = match *shift {
            ShiftKind::Nominal | ShiftKind::Target { .. } => (self.noise_range, self.obstacle_scale),
            ShiftKind::Covariate { noise_range } => (noise_range, self.obstacle_scale),
            ShiftKind::LabelConcept { scale } => (self.noise_range, self.obstacle_scale * scale),
        };
        let step = v0 * self.sampling_period;
        let count = ((d0 / step) - 1e-9).ceil().max(1.0) as usize;
        let frames = (0..count)
            .map(|k| {
                let distance = d0 - k as f64 * step;
                let noise = Self::sample_noise(noise_range, rng);
                self.render_frame(distance, noise, scale, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode {
            height: self.height,
            width: self.width,
            channels: self.channels,
            dt: self.sampling_period,
            shift: *shift,
            d0,
            v0,
            frames,
        })
    }
}

/// Obstacle side in pixels: `max(1, round(24 * scale / (1 + d / 5)))`.
pub fn obstacle_side(distance: f64, scale: f64) -> usize {
    let side = (NEAR_OBSTACLE_SIDE * scale / (1.0 + distance / HALVING_DISTANCE)).round();
    side.max(1.0) as usize
}

fn centered_span(extent: usize, side: usize) -> std::ops::Range<usize> {
    let start = (extent as i64 - side as i64).div_euclid(2);
    let lo = start.max(0) as usize;
    let hi = ((start + side as i64).min(extent as i64)).max(0) as usize;
    lo..hi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// `[H, W, C]`, values in `[0, 1]`.
    pub image: Tensor,
    /// Ground-truth distance in meters.
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    Nominal,
    Covariate { noise_range: [f64; 2] },
    Target { excluded_band: [f64; 2] },
    LabelConcept { scale: f64 },
}

impl ShiftKind {
    pub fn covariate() -> Self {
        ShiftKind::Covariate {
            noise_range: [30.0, 100.0],
        }
    }

    pub fn target() -> Self {
        ShiftKind::Target {
            excluded_band: [15.0, 45.0],
        }
    }

    pub fn label_concept() -> Self {
        ShiftKind::LabelConcept { scale: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShiftKind::Nominal => "nominal",
            ShiftKind::Covariate { .. } => "covariate",
            ShiftKind::Target { .. } => "target",
            ShiftKind::LabelConcept { .. } => "concept",
        }
    }

    /// Parses the short command-line names, with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "nominal" => Some(ShiftKind::Nominal),
            "covariate" => Some(Self::covariate()),
            "target" => Some(Self::target()),
            "concept" | "label_concept" => Some(Self::label_concept()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShiftKind::Nominal => Ok(()),
            ShiftKind::Covariate { noise_range: [lo, hi] } => {
                if 0.0 <= lo && lo <= hi && hi <= MAX_NOISE_INTENSITY {
                    Ok(())
                } else {
                    Err(invalid(format!("covariate noise band [{lo}, {hi}] outside [0, 100]")))
                }
            }
            ShiftKind::Target { excluded_band: [a, b] } => {
                if 0.0 <= a && a <= b && b <= MAX_DISTANCE {
                    Ok(())
                } else {
                    Err(invalid(format!("target band [{a}, {b}] outside [0, 50]")))
                }
            }
            ShiftKind::LabelConcept { scale } => {
                if scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("label-concept scale must be positive"))
                }
            }
        }
    }

    /// Training scene for a model that is meant to be evaluated under this shift.
    /// Only target shift changes what the model sees during training.
    pub fn training_scene(&self, base: &SceneConfig) -> SceneConfig {
        match *self {
            ShiftKind::Target { excluded_band } => SceneConfig {
                excluded_band: Some(excluded_band),
                ..base.clone()
            },
            _ => base.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dt: f64,
    pub shift: ShiftKind,
    pub d0: f64,
    pub v0: f64,
    pub frames: Vec<Frame>,
}

/// Splits an ordered dataset into its first `m` items (proper training set)
/// and the remainder (calibration set).
pub fn split_proper_calibration<T>(mut dataset: Vec<T>, m: usize) -> Result<(Vec<T>, Vec<T>)> {
    if m == 0 || m >= dataset.len() {
        return Err(invalid(format!(
            "proper-set size {m} must lie in [1, {})",
            dataset.len()
        )));
    }
    let calibration = dataset.split_off(m);
    Ok((dataset, calibration))
}

/// Proper-set size for the default 80/20 split.
pub fn default_proper_size(total: usize) -> usize {
    ((total as f64) * 0.8).round() as usize
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    #[serde(rename = "C")]
    channels: usize,
    dt: f64,
    shift: ShiftKind,
    d0: f64,
    v0: f64,
}

/// Companion CSV path for an episode header path (`ep.json` -> `ep.csv`).
pub fn episode_frames_path(header: &Path) -> PathBuf {
    header.with_extension("csv")
}

/// Writes the JSON header to `path` and the frames (distance, then pixels) to the companion CSV.
pub fn write_episode(path: &Path, episode: &Episode) -> Result<()> {
    let header = EpisodeHeader {
        height: episode.height,
        width: episode.width,
        channels: episode.channels,
        dt: episode.dt,
        shift: episode.shift,
        d0: episode.d0,
        v0: episode.v0,
    };
    fs::write(path, serde_json::to_string_pretty(&header)? + "\n")?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(episode_frames_path(path))?;
    for frame in &episode.frames {
        let mut row = Vec::with_capacity(frame.image.len() + 1);
        row.push(frame.distance.to_string());
        row.extend(frame.image.data().iter().map(f64::to_string));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let header: EpisodeHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    let shape = vec![header.height, header.width, header.channels];
    let volume: usize = shape.iter().product();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(episode_frames_path(path))?;
    let mut frames = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .map(|field| field.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                kind: "episode",
                detail: format!("row {line}: {e}"),
            })?;
        if values.len() != volume + 1 {
            return Err(Error::Format {
                kind: "episode",
                detail: format!("row {line} has {} values, expected {}", values.len(), volume + 1),
            });
        }
        frames.push(Frame {
            distance: values[0],
            image: Tensor::new(shape.clone(), values[1..].to_vec())?,
        });
    }
    if frames.is_empty() {
        return Err(Error::Format {
            kind: "episode",
            detail: "no frames".into(),
        });
    }
    Ok(Episode {
        height: header.height,
        width: header.width,
        channels: header.channels,
        dt: header.dt,
        shift: header.shift,
        d0: header.d0,
        v0: header.v0,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lit_pixels(frame: &Frame) -> usize {
        frame.image.data().iter().filter(|&&v| v > 0.5).count()
    }

    #[test]
    fn side_at_zero_distance() {
        let scene = SceneConfig::default();
        let frame = scene.render_frame(0.0, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(lit_pixels(&frame), 24 * 24);
        // Background corners stay black.
        assert_eq!(frame.image.data()[0], 0.0);
        assert_eq!(frame.image.data()[32 * 32 - 1], 0.0);
    }

    #[test]
    fn side_at_fifty_meters() {
        assert_eq!(obstacle_side(50.0, 1.0), 2);
        let scene = SceneConfig::default();
        let frame = scene.render_frame(50.0, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(lit_pixels(&frame), 4);
    }

    #[test]
    fn obstacle_is_centered() {
        let scene = SceneConfig::default();
        let frame = scene.render_frame(50.0, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let lit: Vec<usize> = frame
            .image
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(lit, vec![15 * 32 + 15, 15 * 32 + 16, 16 * 32 + 15, 16 * 32 + 16]);
    }

    #[test]
    fn oversized_obstacle_is_clipped() {
        let scene = SceneConfig::default();
        let frame = scene.render_frame(0.0, 0.0, 2.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(lit_pixels(&frame), 32 * 32);
    }

    #[test]
    fn render_rejects_out_of_range() {
        let scene = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(scene.render_frame(-0.1, 0.0, 1.0, &mut rng).is_err());
        assert!(scene.render_frame(50.1, 0.0, 1.0, &mut rng).is_err());
        assert!(scene.render_frame(10.0, 101.0, 1.0, &mut rng).is_err());
        assert!(scene.render_frame(10.0, 10.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noisy_pixels_stay_in_unit_interval() {
        let scene = SceneConfig::default();
        let frame = scene.render_frame(10.0, 100.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(frame.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(frame.image.data().iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn episode_frame_count() {
        let scene = SceneConfig::default();
        let ep = scene
            .generate_episode(&ShiftKind::Nominal, 5.0, 10.0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(ep.frames.len(), 10);
        assert_eq!(ep.frames[0].distance, 5.0);
        for pair in ep.frames.windows(2) {
            assert!((pair[0].distance - pair[1].distance - 0.5).abs() < 1e-12);
        }
        assert!(ep.frames.last().unwrap().distance > 0.0);
    }

    #[test]
    fn episode_rejects_bad_kinematics() {
        let scene = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(scene.generate_episode(&ShiftKind::Nominal, 0.0, 10.0, &mut rng).is_err());
        assert!(scene.generate_episode(&ShiftKind::Nominal, 51.0, 10.0, &mut rng).is_err());
        assert!(scene.generate_episode(&ShiftKind::Nominal, 20.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn excluded_band_covering_range_is_rejected() {
        let scene = SceneConfig {
            excluded_band: Some([0.0, 50.0]),
            ..SceneConfig::default()
        };
        assert!(scene.generate_dataset(5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn split_sizes() {
        let (proper, calib) = split_proper_calibration((0..10).collect(), 8).unwrap();
        assert_eq!(proper, (0..8).collect::<Vec<_>>());
        assert_eq!(calib, vec![8, 9]);
        assert!(split_proper_calibration((0..10).collect::<Vec<i32>>(), 0).is_err());
        assert!(split_proper_calibration((0..10).collect::<Vec<i32>>(), 10).is_err());
    }

    #[test]
    fn default_split_is_eighty_twenty() {
        assert_eq!(default_proper_size(15920 + 3980), 15920);
    }

    #[test]
    fn shift_names_round_trip() {
        for kind in [
            ShiftKind::Nominal,
            ShiftKind::covariate(),
            ShiftKind::target(),
            ShiftKind::label_concept(),
        ] {
            assert_eq!(ShiftKind::from_name(kind.name()), Some(kind));
        }
        assert_eq!(ShiftKind::from_name("weather"), None);
    }
}
