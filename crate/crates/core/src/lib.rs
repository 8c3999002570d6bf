//! Runtime dataset-shift detection for regression models.
//!
//! A VAE-for-regression model is trained on nominal data; its reconstruction
//! error, optionally weighted by an LRP relevance map of the regressor, serves
//! as the nonconformity measure of an inductive conformal anomaly detector.
//! Per-frame p-values are combined by a simple mixture martingale and a CUSUM
//! statistic raises alarms.

pub mod error;
pub mod icad;
pub mod lrp;
pub mod nn;
pub mod scenario;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::Tensor;
