use serde::{Deserialize, Serialize};

/// Per-stream CUSUM state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    /// CUSUM statistic, never negative.
    pub cusum: f64,
    /// Log-martingale of the previous frame, consumed by the next update.
    pub previous_log_martingale: Option<f64>,
    /// Number of frames processed.
    pub t: u64,
}

impl DetectorState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Advances the CUSUM by one frame.
///
/// `S_1 = 0`; `S_t = max(0, S_{t-1} + log M_{t-1} - delta)`. The update uses the
/// previous frame's log-martingale; `log_martingale` (this frame's value) is
/// stored for the next call.
pub fn cusum_update(state: &DetectorState, log_martingale: f64, delta: f64) -> DetectorState {
    let t = state.t + 1;
    let cusum = match state.previous_log_martingale {
        Some(prev) if t > 1 => (state.cusum + prev - delta).max(0.0),
        _ => 0.0,
    };
    DetectorState {
        cusum,
        previous_log_martingale: Some(log_martingale),
        t,
    }
}
