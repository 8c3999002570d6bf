//! VAE for regression: an encoder `q(z|x)`, a decoder `p(x|z)`, a regressor
//! `q(c|x)` with mean and log-variance heads, and a latent generator mapping a
//! sampled `c` to the mean of the conditional prior `p(z|c)`.
//!
//! Per-example loss (minimized):
//!
//! ```text
//! KL(q(c|x) || N(0,1))
//!   + recon_weight * mse(x, decode(z)),          z ~ q(z|x)
//!   + KL(q(z|x) || N(generator(c), I)),           c ~ q(c|x)
//!   + supervised_weight * -log N(y; mu_c, var_c)
//! ```
//!
//! Labels are standardized so that `N(0, 1)` is a sensible prior on `c`.

mod format;
mod train;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{kl_gaussian_grad, reparameterize, reparameterize_grad, Activation, DenseNet, NetGradients};
use crate::tensor::Tensor;

pub use format::{read_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{train, TrainingConfig, TrainingOutcome};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Standardization constants for regression labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScaling {
    pub mean: f64,
    pub scale: f64,
}

impl LabelScaling {
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn destandardize(&self, c: f64) -> f64 {
        c * self.scale + self.mean
    }
}

/// Mean and population standard deviation of the labels.
pub fn standardize_labels(labels: &[f64]) -> Result<LabelScaling> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot standardize an empty label set".into()));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("labels".into()));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("labels are constant; scale would be zero".into()));
    }
    Ok(LabelScaling { mean, scale })
}

/// Hidden-layer widths of the four sub-networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            regressor_hidden: vec![64, 32],
            generator_hidden: vec![16],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeRegressionModel {
    encoder: DenseNet,
    decoder: DenseNet,
    regressor: DenseNet,
    latent_generator: DenseNet,
    latent_dim: usize,
    labels: LabelScaling,
}

/// Loss decomposition for one example (or a batch average).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub kl_c: f64,
    pub recon_mse: f64,
    pub kl_z: f64,
    pub label_nll: f64,
    pub total: f64,
}

/// Relative weights of the reconstruction and supervised terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub supervised: f64,
}

/// Standard-normal draws consumed by one loss evaluation, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct LossNoise {
    /// `batch x latent_dim`
    pub z: Array2<f64>,
    /// `batch x 1`
    pub c: Array2<f64>,
}

impl LossNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, latent_dim: usize, rng: &mut R) -> Self {
        let z = Array2::from_shape_simple_fn((batch, latent_dim), || rng.sample(StandardNormal));
        let c = Array2::from_shape_simple_fn((batch, 1), || rng.sample(StandardNormal));
        Self { z, c }
    }
}

/// Gradients for all four sub-networks.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeGradients {
    pub encoder: NetGradients,
    pub decoder: NetGradients,
    pub regressor: NetGradients,
    pub latent_generator: NetGradients,
}

impl VaeGradients {
    pub fn zeros_for(model: &VaeRegressionModel) -> Self {
        Self {
            encoder: NetGradients::zeros_for(&model.encoder),
            decoder: NetGradients::zeros_for(&model.decoder),
            regressor: NetGradients::zeros_for(&model.regressor),
            latent_generator: NetGradients::zeros_for(&model.latent_generator),
        }
    }

    /// Same ordering as [`VaeRegressionModel::parameters`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        out.extend(self.decoder.slices());
        out.extend(self.regressor.slices());
        out.extend(self.latent_generator.slices());
        out
    }

    pub fn fill_zero(&mut self) {
        self.encoder.fill_zero();
        self.decoder.fill_zero();
        self.regressor.fill_zero();
        self.latent_generator.fill_zero();
    }
}

/// Regressor output in label units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl VaeRegressionModel {
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        architecture: &Architecture,
        labels: LabelScaling,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument("input and latent dimensions must be positive".into()));
        }
        let (relu, id) = (Activation::Relu, Activation::Identity);
        let encoder = DenseNet::init(&widths(input_dim, &architecture.encoder_hidden, 2 * latent_dim), relu, id, rng);
        let decoder = DenseNet::init(&widths(latent_dim, &architecture.decoder_hidden, input_dim), relu, id, rng);
        let regressor = DenseNet::init(&widths(input_dim, &architecture.regressor_hidden, 2), relu, id, rng);
        let latent_generator = DenseNet::init(&widths(1, &architecture.generator_hidden, latent_dim), relu, id, rng);
        Self::from_parts(encoder, decoder, regressor, latent_generator, labels)
    }

    /// Assembles a model, checking that the four networks fit together.
    pub fn from_parts(
        encoder: DenseNet,
        decoder: DenseNet,
        regressor: DenseNet,
        latent_generator: DenseNet,
        labels: LabelScaling,
    ) -> Result<Self> {
        let input_dim = encoder.input_dim();
        if encoder.output_dim() % 2 != 0 {
            return Err(Error::InvalidArgument("encoder must emit mean and log-variance halves".into()));
        }
        let latent_dim = encoder.output_dim() / 2;
        check_len("decoder input", latent_dim, decoder.input_dim())?;
        check_len("decoder output", input_dim, decoder.output_dim())?;
        check_len("regressor input", input_dim, regressor.input_dim())?;
        check_len("regressor output", 2, regressor.output_dim())?;
        check_len("latent generator input", 1, latent_generator.input_dim())?;
        check_len("latent generator output", latent_dim, latent_generator.output_dim())?;
        if !(labels.scale > 0.0 && labels.scale.is_finite() && labels.mean.is_finite()) {
            return Err(Error::InvalidArgument("label scale must be positive".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            regressor,
            latent_generator,
            latent_dim,
            labels,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn regressor(&self) -> &DenseNet {
        &self.regressor
    }

    pub fn latent_generator(&self) -> &DenseNet {
        &self.latent_generator
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    pub fn regressor_mut(&mut self) -> &mut DenseNet {
        &mut self.regressor
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn labels(&self) -> LabelScaling {
        self.labels
    }

    pub fn networks(&self) -> [&DenseNet; 4] {
        [&self.encoder, &self.decoder, &self.regressor, &self.latent_generator]
    }

    /// All parameter slices: encoder, decoder, regressor, latent generator.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.networks().into_iter().flat_map(DenseNet::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.parameters_mut();
        out.extend(self.decoder.parameters_mut());
        out.extend(self.regressor.parameters_mut());
        out.extend(self.latent_generator.parameters_mut());
        out
    }

    pub fn default_loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.input_dim() as f64,
            supervised: 1.0,
        }
    }

    /// Posterior mean and log-variance of `z`.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.predict(x)?;
        let (mean, log_var) = out.split_at(self.latent_dim);
        Ok((mean.to_vec(), log_var.to_vec()))
    }

    /// Regressor mean and variance, de-standardized to label units.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let out = self.regressor.predict(x)?;
        let scale = self.labels.scale;
        Ok(Prediction {
            mean: self.labels.destandardize(out[0]),
            variance: out[1].exp() * scale * scale,
        })
    }

    /// `n` independent reconstructions `decode(z_k)`, `z_k ~ q(z|x)`, each shaped like `x`.
    pub fn reconstruct_samples<R: Rng + ?Sized>(&self, x: &Tensor, n: usize, rng: &mut R) -> Result<Vec<Tensor>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let (mean, log_var) = self.encode(x.data())?;
        let std: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
        let latent = Array2::from_shape_fn((n, self.latent_dim), |(_, j)| {
            let e: f64 = rng.sample(StandardNormal);
            mean[j] + std[j] * e
        });
        let trace = self.decoder.forward_batch(latent.view())?;
        trace
            .output_matrix()
            .axis_iter(Axis(0))
            .map(|row| Tensor::new(x.shape().to_vec(), row.to_vec()))
            .collect()
    }

    /// Loss terms for one example with standardized label `y`.
    pub fn loss_terms<R: Rng + ?Sized>(&self, x: &[f64], y: f64, weights: LossWeights, rng: &mut R) -> Result<ElboTerms> {
        let noise = LossNoise::draw(1, self.latent_dim, rng);
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::Shape {
            context: "loss input",
            expected: self.input_dim(),
            actual: x.len(),
        })?;
        Ok(self.batch_loss(xs, &[y], &noise, weights, None)?)
    }

    /// Batch-averaged loss; when `grads` is given, gradients of that average are added to it.
    pub fn batch_loss(
        &self,
        xs: ArrayView2<f64>,
        ys: &[f64],
        noise: &LossNoise,
        weights: LossWeights,
        grads: Option<&mut VaeGradients>,
    ) -> Result<ElboTerms> {
        let batch = xs.nrows();
        let latent = self.latent_dim;
        let dim = self.input_dim();
        check_len("loss input width", dim, xs.ncols())?;
        check_len("loss labels", batch, ys.len())?;
        check_len("latent noise rows", batch, noise.z.nrows())?;
        check_len("latent noise cols", latent, noise.z.ncols())?;
        check_len("label noise rows", batch, noise.c.nrows())?;
        if batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }

        let enc = self.encoder.forward_batch(xs)?;
        let reg = self.regressor.forward_batch(xs)?;
        let enc_out = enc.output_matrix();
        let reg_out = reg.output_matrix();

        let mut z = Array2::zeros((batch, latent));
        let mut c_sample = Array2::zeros((batch, 1));
        for b in 0..batch {
            let row = enc_out.row(b);
            let (mu, lv) = (row.slice(ndarray::s![..latent]), row.slice(ndarray::s![latent..]));
            let zb = reparameterize(mu.as_slice().unwrap(), lv.as_slice().unwrap(), noise.z.row(b).as_slice().unwrap());
            z.row_mut(b).assign(&ndarray::Array1::from(zb));
            c_sample[[b, 0]] = reg_out[[b, 0]] + (0.5 * reg_out[[b, 1]]).exp() * noise.c[[b, 0]];
        }
        let dec = self.decoder.forward_batch(z.view())?;
        let gen = self.latent_generator.forward_batch(c_sample.view())?;
        let recon = dec.output_matrix();
        let prior_mean = gen.output_matrix();

        let inv_b = 1.0 / batch as f64;
        let mut terms = ElboTerms::default();
        let mut d_enc = Array2::zeros((batch, 2 * latent));
        let mut d_reg = Array2::zeros((batch, 2));
        let mut d_prior = Array2::zeros((batch, latent));
        let d_recon = (&recon.view() - &xs) * (weights.recon * 2.0 / dim as f64 * inv_b);
        let zero_lv = vec![0.0; latent];

        for b in 0..batch {
            let (mu_c, lv_c) = (reg_out[[b, 0]], reg_out[[b, 1]]);
            let row = enc_out.row(b);
            let mu_z = row.slice(ndarray::s![..latent]).to_vec();
            let lv_z = row.slice(ndarray::s![latent..]).to_vec();
            let mu_p = prior_mean.row(b).to_vec();

            let kl_c = 0.5 * (mu_c * mu_c + lv_c.exp() - lv_c - 1.0);
            let mse = recon
                .row(b)
                .iter()
                .zip(xs.row(b))
                .map(|(r, x)| (r - x) * (r - x))
                .sum::<f64>()
                / dim as f64;
            let kl_z: f64 = (0..latent)
                .map(|j| 0.5 * (lv_z[j].exp() + (mu_z[j] - mu_p[j]).powi(2) - lv_z[j] - 1.0))
                .sum();
            let resid = ys[b] - mu_c;
            let inv_var_c = (-lv_c).exp();
            let nll = 0.5 * (LN_2PI + lv_c + resid * resid * inv_var_c);

            terms.kl_c += kl_c * inv_b;
            terms.recon_mse += mse * inv_b;
            terms.kl_z += kl_z * inv_b;
            terms.label_nll += nll * inv_b;

            if grads.is_some() {
                let kz = kl_gaussian_grad(&mu_z, &lv_z, &mu_p, &zero_lv);
                for j in 0..latent {
                    d_enc[[b, j]] = kz.mean1[j] * inv_b;
                    d_enc[[b, latent + j]] = kz.log_var1[j] * inv_b;
                    d_prior[[b, j]] = kz.mean0[j] * inv_b;
                }
                d_reg[[b, 0]] = (mu_c - weights.supervised * resid * inv_var_c) * inv_b;
                d_reg[[b, 1]] =
                    (0.5 * (lv_c.exp() - 1.0) + weights.supervised * 0.5 * (1.0 - resid * resid * inv_var_c)) * inv_b;
            }
        }
        terms.kl_c = terms.kl_c.max(0.0);
        terms.kl_z = terms.kl_z.max(0.0);
        terms.total = terms.kl_c + weights.recon * terms.recon_mse + terms.kl_z + weights.supervised * terms.label_nll;
        if !terms.total.is_finite() {
            return Err(Error::NonFinite(format!("loss terms {terms:?}")));
        }

        if let Some(grads) = grads {
            let d_z = self
                .decoder
                .accumulate_gradients(&dec, d_recon.view(), &mut grads.decoder, true)?
                .expect("input gradient requested");
            let d_c = self
                .latent_generator
                .accumulate_gradients(&gen, d_prior.view(), &mut grads.latent_generator, true)?
                .expect("input gradient requested");
            for b in 0..batch {
                let lv_z = enc_out.row(b).slice(ndarray::s![latent..]).to_vec();
                let (dm, dlv) =
                    reparameterize_grad(&lv_z, noise.z.row(b).as_slice().unwrap(), d_z.row(b).as_slice().unwrap());
                for j in 0..latent {
                    d_enc[[b, j]] += dm[j];
                    d_enc[[b, latent + j]] += dlv[j];
                }
                let lv_c = reg_out[[b, 1]];
                d_reg[[b, 0]] += d_c[[b, 0]];
                d_reg[[b, 1]] += d_c[[b, 0]] * 0.5 * (0.5 * lv_c).exp() * noise.c[[b, 0]];
            }
            self.encoder.accumulate_gradients(&enc, d_enc.view(), &mut grads.encoder, false)?;
            self.regressor.accumulate_gradients(&reg, d_reg.view(), &mut grads.regressor, false)?;
        }
        Ok(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> VaeRegressionModel {
        let arch = Architecture {
            encoder_hidden: vec![6],
            decoder_hidden: vec![5],
            regressor_hidden: vec![4],
            generator_hidden: vec![3],
        };
        let labels = LabelScaling { mean: 25.0, scale: 10.0 };
        VaeRegressionModel::init(4, 2, &arch, labels, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn linear(weights: Array2<f64>, biases: Array1<f64>) -> DenseNet {
        DenseNet::new(vec![DenseLayer::new(weights, biases, Activation::Identity).unwrap()]).unwrap()
    }

    #[test]
    fn standardize_two_labels() {
        let s = standardize_labels(&[0.0, 50.0]).unwrap();
        assert_eq!(s, LabelScaling { mean: 25.0, scale: 25.0 });
    }

    #[test]
    fn standardize_rejects_constant_and_empty() {
        assert!(standardize_labels(&[3.0, 3.0, 3.0]).is_err());
        assert!(standardize_labels(&[]).is_err());
    }

    #[test]
    fn standardize_round_trip() {
        let s = LabelScaling { mean: 24.3, scale: 14.1 };
        for y in [0.0, 7.25, 33.3, 50.0] {
            assert!((s.destandardize(s.standardize(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_normal_regressor_has_zero_kl_c() {
        let mut model = tiny_model(1);
        model.regressor = linear(Array2::zeros((2, 4)), Array1::zeros(2));
        let terms = model
            .loss_terms(&[0.1, 0.2, 0.3, 0.4], 0.0, model.default_loss_weights(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(terms.kl_c, 0.0);
    }

    #[test]
    fn exact_decoder_has_zero_recon() {
        // Encoder emits z = 0 with log-variance -inf-ish, decoder emits its bias = x.
        let x = [0.1, 0.2, 0.3, 0.4];
        let mut model = tiny_model(2);
        let lv = Array1::from(vec![0.0, 0.0, -800.0, -800.0]);
        model.encoder = linear(Array2::zeros((4, 4)), lv);
        model.decoder = linear(Array2::zeros((4, 2)), Array1::from(x.to_vec()));
        let terms = model
            .loss_terms(&x, 0.0, model.default_loss_weights(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(terms.recon_mse, 0.0);
    }

    #[test]
    fn total_combines_terms() {
        let model = tiny_model(3);
        let w = LossWeights { recon: 3.0, supervised: 0.5 };
        let t = model.loss_terms(&[0.5, 0.1, 0.9, 0.0], 0.7, w, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(t.kl_c >= 0.0 && t.kl_z >= 0.0 && t.recon_mse >= 0.0);
        let expected = t.kl_c + 3.0 * t.recon_mse + t.kl_z + 0.5 * t.label_nll;
        assert!((t.total - expected).abs() < 1e-12);
    }

    #[test]
    fn predict_of_zero_head_is_label_mean() {
        let mut model = tiny_model(5);
        model.regressor = linear(Array2::zeros((2, 4)), Array1::zeros(2));
        let p = model.predict(&[0.3, 0.3, 0.3, 0.3]).unwrap();
        assert_eq!(p.mean, 25.0);
        assert_eq!(p.variance, 100.0);
    }

    #[test]
    fn predict_ignores_decoder() {
        let mut model = tiny_model(6);
        let x = [0.9, 0.1, 0.4, 0.2];
        let before = model.predict(&x).unwrap();
        for p in model.decoder_mut().parameters_mut() {
            p.iter_mut().for_each(|v| *v = 3.0 * *v + 1.0);
        }
        assert_eq!(model.predict(&x).unwrap(), before);
    }

    #[test]
    fn reconstruction_sampling() {
        let model = tiny_model(7);
        let x = Tensor::new(vec![2, 2, 1], vec![0.1, 0.5, 0.9, 0.2]).unwrap();
        assert!(model.reconstruct_samples(&x, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
        let a = model.reconstruct_samples(&x, 10, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = model.reconstruct_samples(&x, 10, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.shape() == [2, 2, 1]));
        let (_, lv) = model.encode(x.data()).unwrap();
        assert!(lv.iter().all(|&v| v > -6.0));
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        let m = tiny_model(8);
        let bad_decoder = linear(Array2::zeros((3, 2)), Array1::zeros(3));
        assert!(VaeRegressionModel::from_parts(
            m.encoder.clone(),
            bad_decoder,
            m.regressor.clone(),
            m.latent_generator.clone(),
            m.labels
        )
        .is_err());
        let zero_scale = LabelScaling { mean: 0.0, scale: 0.0 };
        assert!(VaeRegressionModel::from_parts(
            m.encoder.clone(),
            m.decoder.clone(),
            m.regressor.clone(),
            m.latent_generator.clone(),
            zero_scale
        )
        .is_err());
    }
}
