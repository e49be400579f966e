//! Bias-corrected adaptive-moment optimizer state and update.

use crate::error::{Result, SisnError};

use super::Tensor;

/// Per-parameter first/second moments plus the step counter. Moment tensors
/// are aligned index-for-index with the parameter list they were built from.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One optimizer step over the full parameter list.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(SisnError::InvalidInput(format!(
                "adam_step: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if p.shape != grads[i].shape {
                return Err(SisnError::ShapeMismatch {
                    context: format!("adam_step param {i}"),
                    expected: format!("{:?}", p.shape),
                    got: format!("{:?}", grads[i].shape),
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.data.len() {
                let g = grads[i].data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
