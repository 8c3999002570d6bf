//! Binary model file.
//!
//! ```text
//! magic "SWVR" | version u32 | latent_dim u32
//! for each of encoder, decoder, regressor, latent generator:
//!     layer_count u32, then per layer: inputs u32, outputs u32, activation u8
//! label_mean f64 | label_scale f64
//! parameters f64[]   (same network order; per layer weights row-major, then biases)
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{LabelScaling, VaeRegressionModel};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, DenseNet};

pub const MODEL_MAGIC: [u8; 4] = *b"SWVR";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "model",
        detail: detail.into(),
    }
}

pub fn write_model<W: Write>(model: &VaeRegressionModel, mut out: W) -> Result<()> {
    out.write_all(&MODEL_MAGIC)?;
    out.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(model.latent_dim() as u32).to_le_bytes())?;
    for net in model.networks() {
        out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
        for layer in net.layers() {
            out.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
            out.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
            out.write_all(&[layer.activation().code()])?;
        }
    }
    let labels = model.labels();
    out.write_all(&labels.mean.to_le_bytes())?;
    out.write_all(&labels.scale.to_le_bytes())?;
    for slice in model.parameters() {
        for v in slice {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_model<R: Read>(mut input: R) -> Result<VaeRegressionModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(malformed("bad magic, not a SWVR model file"));
    }
    let version = cur.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(malformed(format!(
            "unsupported version {version}, expected {MODEL_FORMAT_VERSION}"
        )));
    }
    let latent_dim = cur.u32()? as usize;
    let mut tables = Vec::with_capacity(4);
    for _ in 0..4 {
        let count = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = cur.u32()? as usize;
            let outputs = cur.u32()? as usize;
            let code = cur.u8()?;
            let act = Activation::from_code(code).ok_or_else(|| malformed(format!("unknown activation {code}")))?;
            layers.push((inputs, outputs, act));
        }
        tables.push(layers);
    }
    let labels = LabelScaling {
        mean: cur.f64()?,
        scale: cur.f64()?,
    };
    let mut nets = Vec::with_capacity(4);
    for table in tables {
        let mut layers = Vec::with_capacity(table.len());
        for (inputs, outputs, act) in table {
            let weights = cur.f64s(inputs * outputs)?;
            let biases = cur.f64s(outputs)?;
            let weights = Array2::from_shape_vec((outputs, inputs), weights).expect("length checked");
            layers.push(DenseLayer::new(weights, Array1::from(biases), act)?);
        }
        nets.push(DenseNet::new(layers)?);
    }
    if cur.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let [encoder, decoder, regressor, generator]: [DenseNet; 4] = nets.try_into().expect("four networks");
    let model = VaeRegressionModel::from_parts(encoder, decoder, regressor, generator, labels)?;
    if model.latent_dim() != latent_dim {
        return Err(malformed(format!(
            "header latent_dim {latent_dim} disagrees with encoder width {}",
            model.latent_dim()
        )));
    }
    Ok(model)
}
