use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps_taken: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            steps_taken: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        if params.len() != grads.len() || self.first.len() != grads.len() {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        self.steps_taken += 1;
        let c1 = 1.0 - beta1.powi(self.steps_taken as i32);
        let c2 = 1.0 - beta2.powi(self.steps_taken as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
