use serde::{Deserialize, Serialize};
use shiftwatch_core::icad::DetectorConfig;

/// Outcome of one batch of episodes of a single kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub kind: String,
    pub episodes: usize,
    /// Episodes in which any frame alarmed.
    pub alarms: usize,
    /// Index of the first alarming frame, per episode.
    pub first_alarms: Vec<Option<usize>>,
    /// Frame count per episode.
    pub frames: Vec<usize>,
}

/// Per-step detection latency statistics in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub steps: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimingSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self {
                steps: 0,
                min: 0.0,
                q1: 0.0,
                median: 0.0,
                q3: 0.0,
                max: 0.0,
            };
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            steps: sorted.len(),
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub shift: String,
    pub seed: u64,
    pub detector: DetectorConfig,
    /// Nominal episodes that alarmed; absent for target shift.
    pub false_positives: Option<usize>,
    /// Shifted episodes that never alarmed; absent for a nominal-only run.
    pub false_negatives: Option<usize>,
    pub nominal: Option<EpisodeSet>,
    pub shifted: Option<EpisodeSet>,
    /// Wall-clock numbers; the only part of the report that varies between runs.
    pub timing_ms: TimingSummary,
}
