//! Diagonal-Gaussian helpers: reparameterized sampling and closed-form KL.

use crate::error::{check_len, Error, Result};
use crate::tensor::Tensor;

/// `mean + exp(0.5 * log_variance) * noise`, elementwise.
pub fn reparameterize(mean: &[f64], log_variance: &[f64], noise: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(log_variance)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Back-propagates `upstream` (gradient w.r.t. the sample) to `(d_mean, d_log_variance)`.
pub fn reparameterize_grad(log_variance: &[f64], noise: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d_mean = upstream.to_vec();
    let d_log_var = log_variance
        .iter()
        .zip(noise)
        .zip(upstream)
        .map(|((lv, e), g)| g * 0.5 * (0.5 * lv).exp() * e)
        .collect();
    (d_mean, d_log_var)
}

pub fn gaussian_sample(mean: &Tensor, log_variance: &Tensor, noise: &Tensor) -> Result<Tensor> {
    check_len("gaussian_sample log-variance", mean.len(), log_variance.len())?;
    check_len("gaussian_sample noise", mean.len(), noise.len())?;
    Tensor::new(
        mean.shape().to_vec(),
        reparameterize(mean.data(), log_variance.data(), noise.data()),
    )
}

/// `KL(N(mean1, exp(log_var1)) || N(mean0, exp(log_var0)))` for diagonal Gaussians, summed over dimensions.
pub fn kl_gaussian(mean1: &[f64], log_var1: &[f64], mean0: &[f64], log_var0: &[f64]) -> Result<f64> {
    let n = mean1.len();
    check_len("kl log_var1", n, log_var1.len())?;
    check_len("kl mean0", n, mean0.len())?;
    check_len("kl log_var0", n, log_var0.len())?;
    if [mean1, log_var1, mean0, log_var0]
        .iter()
        .any(|s| s.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("kl_gaussian input".into()));
    }
    let kl: f64 = (0..n)
        .map(|i| {
            let diff = mean1[i] - mean0[i];
            0.5 * (log_var0[i] - log_var1[i] + ((log_var1[i]).exp() + diff * diff) * (-log_var0[i]).exp() - 1.0)
        })
        .sum();
    // Rounding can push an exact zero slightly negative.
    Ok(kl.max(0.0))
}

/// Partial derivatives of [`kl_gaussian`].
#[derive(Clone, Debug, PartialEq)]
pub struct KlGrad {
    pub mean1: Vec<f64>,
    pub log_var1: Vec<f64>,
    pub mean0: Vec<f64>,
    pub log_var0: Vec<f64>,
}

pub fn kl_gaussian_grad(mean1: &[f64], log_var1: &[f64], mean0: &[f64], log_var0: &[f64]) -> KlGrad {
    let n = mean1.len();
    let mut g = KlGrad {
        mean1: vec![0.0; n],
        log_var1: vec![0.0; n],
        mean0: vec![0.0; n],
        log_var0: vec![0.0; n],
    };
    for i in 0..n {
        let inv_var0 = (-log_var0[i]).exp();
        let diff = mean1[i] - mean0[i];
        g.mean1[i] = diff * inv_var0;
        g.mean0[i] = -diff * inv_var0;
        g.log_var1[i] = 0.5 * ((log_var1[i] - log_var0[i]).exp() - 1.0);
        g.log_var0[i] = 0.5 * (1.0 - (log_var1[i].exp() + diff * diff) * inv_var0);
    }
    g
}
