use crate::error::{Error, Result};

/// Default number of trapezoid nodes on (0, 1].
pub const DEFAULT_QUADRATURE_NODES: usize = 1024;

/// Natural log of the simple mixture martingale
///
/// `M = ∫₀¹ Π_k ε p_k^(ε-1) dε = ∫₀¹ ε^N exp((ε-1) Σ ln p_k) dε`
///
/// by the trapezoid rule on `nodes` uniform nodes `i / nodes`, accumulated
/// in the log domain so that very small p-values cannot overflow.
pub fn log_simple_mixture(p_values: &[f64], nodes: usize) -> Result<f64> {
    if nodes == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
    }
    if let Some(bad) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside (0, 1]")));
    }
    let n = p_values.len() as f64;
    let log_sum: f64 = p_values.iter().map(|p| p.ln()).sum();
    let h = 1.0 / nodes as f64;
    let log_integrand = |eps: f64| n * eps.ln() + (eps - 1.0) * log_sum;

    // Node 0 contributes only when N = 0 (ε^0 = 1 at ε = 0).
    let mut terms = Vec::with_capacity(nodes + 1);
    if p_values.is_empty() {
        terms.push((0.5 * h).ln() - log_sum);
    }
    for i in 1..=nodes {
        let eps = i as f64 * h;
        let weight = if i == nodes { 0.5 * h } else { h };
        terms.push(weight.ln() + log_integrand(eps));
    }
    Ok(log_sum_exp(&terms))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_p_value_gives_one_half() {
        let m = log_simple_mixture(&[1.0], DEFAULT_QUADRATURE_NODES).unwrap().exp();
        assert!((m - 0.5).abs() < 1e-6);
    }

    #[test]
    fn all_ones_gives_reciprocal() {
        for n in 1..=12 {
            let m = log_simple_mixture(&vec![1.0; n], DEFAULT_QUADRATURE_NODES).unwrap().exp();
            let exact = 1.0 / (n as f64 + 1.0);
            assert!(((m - exact) / exact).abs() < 1e-4, "n={n} m={m}");
        }
    }

    #[test]
    fn p_of_inverse_e() {
        let m = log_simple_mixture(&[(-1.0f64).exp()], DEFAULT_QUADRATURE_NODES).unwrap().exp();
        let exact = std::f64::consts::E - 2.0;
        assert!(((m - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn empty_sequence_is_one() {
        let m = log_simple_mixture(&[], DEFAULT_QUADRATURE_NODES).unwrap();
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_p() {
        assert!(log_simple_mixture(&[0.0], 64).is_err());
        assert!(log_simple_mixture(&[1.5], 64).is_err());
        assert!(log_simple_mixture(&[-0.2], 64).is_err());
        assert!(log_simple_mixture(&[f64::NAN], 64).is_err());
    }

    #[test]
    fn tiny_p_values_stay_finite() {
        let v = log_simple_mixture(&[1e-300; 20], DEFAULT_QUADRATURE_NODES).unwrap();
        assert!(v.is_finite() && v > 100.0);
    }
}
