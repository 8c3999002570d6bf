//! Training, calibration, detection and evaluation pipeline behind the
//! `shiftwatch` command.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{EpisodeSampling, RunConfig};
pub use report::{EpisodeSet, EvalReport, TimingSummary};
