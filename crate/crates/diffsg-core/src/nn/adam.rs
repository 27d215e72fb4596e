//! Adam optimizer over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One bias-corrected Adam update over a flat parameter vector.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_blocks(&mut [params], &[grads])
    }

    /// One update over parameters split into ordered blocks. Blocks must
    /// jointly cover exactly the parameter count the state was built for,
    /// in a stable order.
    pub fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let p_len: usize = params.iter().map(|b| b.len()).sum();
        let g_len: usize = grads.iter().map(|b| b.len()).sum();
        if p_len != self.first_moment.len() || g_len != p_len || params.len() != grads.len() {
            return Err(Error::invalid_argument(format!(
                "adam step: state holds {} params, got {} params / {} grads",
                self.first_moment.len(),
                p_len,
                g_len
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let mut offset = 0;
        for (pb, gb) in params.iter_mut().zip(grads.iter()) {
            if pb.len() != gb.len() {
                return Err(Error::invalid_argument(
                    "adam step: param/grad block length mismatch",
                ));
            }
            let m = &mut self.first_moment[offset..offset + pb.len()];
            let v = &mut self.second_moment[offset..offset + pb.len()];
            for i in 0..pb.len() {
                let g = gb[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pb[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += pb.len();
        }
        Ok(())
    }
}
