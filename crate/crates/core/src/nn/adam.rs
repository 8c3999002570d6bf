use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// `sizes` lists the length of each parameter tensor, in the order `step` will receive them.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_len("adam parameter tensors", self.first.len(), params.len())?;
        check_len("adam gradient tensors", self.first.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            check_len("adam parameter", m.len(), p.len())?;
            check_len("adam gradient", m.len(), g.len())?;
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        let mut w = [1.0, -2.0, 0.5];
        state.step(&mut [&mut w], &[&[0.0; 3]]).unwrap();
        assert_eq!(w, [1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [-7.0, 0.02, 3.0] {
            let mut state = AdamState::new(AdamConfig::default(), &[1]);
            let mut w = [0.0];
            state.step(&mut [&mut w], &[&[g]]).unwrap();
            assert!((w[0].abs() - 1e-3).abs() < 1e-8, "g={g} w={}", w[0]);
            assert_eq!(w[0].signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &[1]);
        let mut w = [0.0];
        for _ in 0..500 {
            let g = 2.0 * (w[0] - 3.0);
            state.step(&mut [&mut w], &[&[g]]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        let mut w = [0.0; 3];
        assert!(state.step(&mut [&mut w], &[&[0.0; 3]]).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
