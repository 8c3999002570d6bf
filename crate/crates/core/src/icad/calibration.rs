use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{nonconformity_vae_lrp, weighting_map};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vae::VaeRegressionModel;

pub const CALIBRATION_MAGIC: [u8; 4] = *b"SWCT";
pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// Sorted nonconformity scores of the calibration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    scores: Vec<f64>,
    use_lrp: bool,
}

impl CalibrationTable {
    /// Sorts `scores` ascending. Scores must be finite and non-negative.
    pub fn new(mut scores: Vec<f64>, use_lrp: bool) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("calibration table needs at least one score".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid calibration score {bad}")));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { scores, use_lrp })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn count(&self) -> usize {
        self.scores.len()
    }

    pub fn use_lrp(&self) -> bool {
        self.use_lrp
    }

    /// Fraction of calibration scores at least as large as `score`, floored at
    /// `1 / count` so that it is never zero.
    pub fn p_value(&self, score: f64) -> f64 {
        let below = self.scores.partition_point(|&s| s < score);
        let at_least = (self.scores.len() - below).max(1);
        at_least as f64 / self.scores.len() as f64
    }
}

/// One reconstruction and one score per calibration image.
pub fn calibrate<R: Rng + ?Sized>(
    model: &VaeRegressionModel,
    images: &[Tensor],
    use_lrp: bool,
    rng: &mut R,
) -> Result<CalibrationTable> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    let scores = images
        .iter()
        .map(|x| {
            let weights = weighting_map(model, x, use_lrp)?;
            let reconstruction = model
                .reconstruct_samples(x, 1, rng)?
                .pop()
                .expect("one sample requested");
            nonconformity_vae_lrp(x, &reconstruction, &weights)
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationTable::new(scores, use_lrp)
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "calibration",
        detail: detail.into(),
    }
}

/// `magic "SWCT" | version u32 | count u64 | use_lrp u8 | scores f64[count]`, little-endian.
pub fn write_calibration<W: Write>(table: &CalibrationTable, mut out: W) -> Result<()> {
    out.write_all(&CALIBRATION_MAGIC)?;
    out.write_all(&CALIBRATION_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(table.count() as u64).to_le_bytes())?;
    out.write_all(&[u8::from(table.use_lrp)])?;
    for s in &table.scores {
        out.write_all(&s.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_calibration<R: Read>(mut input: R) -> Result<CalibrationTable> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    const HEADER: usize = 4 + 4 + 8 + 1;
    if bytes.len() < HEADER {
        return Err(malformed("truncated header"));
    }
    if bytes[..4] != CALIBRATION_MAGIC {
        return Err(malformed("bad magic, not a SWCT calibration file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CALIBRATION_FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let use_lrp = match bytes[16] {
        0 => false,
        1 => true,
        other => return Err(malformed(format!("bad use_lrp flag {other}"))),
    };
    let body = &bytes[HEADER..];
    if Some(body.len()) != count.checked_mul(8) {
        return Err(malformed(format!("expected {count} scores, found {} bytes", body.len())));
    }
    let scores: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if scores.windows(2).any(|w| w[0] > w[1]) {
        return Err(malformed("scores are not sorted"));
    }
    CalibrationTable::new(scores, use_lrp)
}
