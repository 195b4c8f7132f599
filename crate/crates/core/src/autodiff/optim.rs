use std::collections::HashMap;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    /// Fails without touching anything if some parameter lacks a gradient.
    pub fn step<S: Scalar>(&mut self, params: &[Tensor<S>]) -> Result<()> {
        let grads = params
            .iter()
            .map(|p| {
                p.grad().ok_or_else(|| {
                    Error::MissingGrad(p.name().map(str::to_owned).unwrap_or_else(|| format!("#{}", p.id())))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, g) in params.iter().zip(grads) {
            let (m, v) = self.moments.entry(p.id()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let mut data = p.data_mut();
            for i in 0..g.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let upd = self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                data[i] = S::from_f64(data[i].as_f64() - upd);
            }
            drop(data);
            p.zero_grad();
        }
        Ok(())
    }
}
