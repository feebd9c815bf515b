use serde::{Deserialize, Serialize};

use super::VelocityNet;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Applies one update from `net`'s accumulated gradient, then clears it.
    /// A non-finite gradient aborts before any parameter changes.
    pub fn step(&mut self, net: &mut VelocityNet) -> Result<()> {
        let (params, grad) = net.params_and_grad_mut();
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer sized for {} params, network has {}",
                self.m.len(),
                params.len()
            )));
        }
        let next = self.step + 1;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: next as usize,
                msg: format!("non-finite gradient at parameter {i}"),
            });
        }
        self.step = next;
        let bc1 = 1.0 - self.beta1.powi(next as i32);
        let bc2 = 1.0 - self.beta2.powi(next as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        Ok(())
    }
}
