//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library code it checks.

#![allow(dead_code)]

use rand::Rng;
use shiftwatch_core::nn::{Activation, DenseNet};

/// Per-neuron forward pass, no matrix library. Returns every layer's
/// activations, input first.
pub fn forward_loops(net: &DenseNet, x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    for layer in net.layers() {
        let a = acts.last().unwrap();
        let w = layer.weights();
        let mut out = Vec::with_capacity(layer.output_dim());
        for k in 0..layer.output_dim() {
            let mut z = layer.biases()[k];
            for (j, aj) in a.iter().enumerate() {
                z += w[[k, j]] * aj;
            }
            out.push(match layer.activation() {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            });
        }
        acts.push(out);
    }
    acts
}

/// Pre-activations per layer from the loop forward pass.
pub fn pre_activations_loops(net: &DenseNet, x: &[f64]) -> Vec<Vec<f64>> {
    let acts = forward_loops(net, x);
    net.layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            (0..layer.output_dim())
                .map(|k| layer.biases()[k] + (0..layer.input_dim()).map(|j| layer.weights()[[k, j]] * acts[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Epsilon-rule relevance with explicit loops, seeded on output unit 0 with
/// the output value. Returns relevance per layer boundary, input first.
pub fn lrp_loops(net: &DenseNet, x: &[f64], epsilon: f64) -> Vec<Vec<f64>> {
    let acts = forward_loops(net, x);
    let zs = pre_activations_loops(net, x);
    let out = acts.last().unwrap();
    let mut r = vec![0.0; out.len()];
    r[0] = out[0];
    let mut layers = vec![r.clone()];
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let a = &acts[i];
        let mut below = vec![0.0; layer.input_dim()];
        for (j, bj) in below.iter_mut().enumerate() {
            for k in 0..layer.output_dim() {
                let z = zs[i][k];
                let sign = if z >= 0.0 { 1.0 } else { -1.0 };
                *bj += a[j] * layer.weights()[[k, j]] * r[k] / (z + epsilon * sign);
            }
        }
        r = below;
        layers.push(r.clone());
    }
    layers.reverse();
    layers
}

/// Central finite difference of `f` at every coordinate of `params`.
pub fn central_differences(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `∫₀¹ ε^n e^{aε} dε` for `a <= 0`.
///
/// Uses the integration-by-parts recursion `I(n,a) = e^a/a - (n/a) I(n-1,a)`
/// when `|a| >= n`, where it is forward stable, and the power series
/// `Σ a^k / (k! (n+k+1))` otherwise.
pub fn moment_integral(n: usize, a: f64) -> f64 {
    if a == 0.0 {
        return 1.0 / (n as f64 + 1.0);
    }
    if a.abs() >= n as f64 {
        let mut i = (a.exp() - 1.0) / a;
        for m in 1..=n {
            i = a.exp() / a - (m as f64 / a) * i;
        }
        i
    } else {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..200 {
            if k > 0 {
                term *= a / k as f64;
            }
            sum += term / (n + k + 1) as f64;
            if term.abs() < 1e-18 {
                break;
            }
        }
        sum
    }
}

/// Simple mixture martingale `∫₀¹ Π ε p_k^{ε-1} dε` in closed form.
pub fn mixture_closed_form(p: &[f64]) -> f64 {
    let s: f64 = p.iter().map(|v| v.ln()).sum();
    (-s).exp() * moment_integral(p.len(), s)
}

/// Monte Carlo estimate of the mixture martingale with its standard error.
pub fn mixture_monte_carlo<R: Rng + ?Sized>(p: &[f64], samples: usize, rng: &mut R) -> (f64, f64) {
    let s: f64 = p.iter().map(|v| v.ln()).sum();
    let n = p.len() as i32;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let e: f64 = rng.random_range(0.0..1.0);
        let v = e.powi(n) * ((e - 1.0) * s).exp();
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// `|{s in scores : s >= alpha}| / len`, floored at `1 / len`, by linear scan.
pub fn p_value_linear(scores: &[f64], alpha: f64) -> f64 {
    let count = scores.iter().filter(|&&s| s >= alpha).count().max(1);
    count as f64 / scores.len() as f64
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
