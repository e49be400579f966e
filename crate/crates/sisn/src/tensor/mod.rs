//! Differentiable tensor substrate.
//!
//! A [`Tensor`] is a plain N×C×H×W value container. Differentiable
//! computations run on a [`Tape`](tape::Tape), which records every operation
//! and replays them in reverse to accumulate gradients. The op set is exactly
//! what the network needs; this is not a general-purpose autodiff library.

mod adam;
mod finite_diff;
mod tape;

pub use adam::AdamState;
pub use finite_diff::{finite_diff_grad, max_rel_error};
pub use tape::{Tape, Var};

use crate::error::{Result, SisnError};

/// Dense 4-D array, row-major by (N, C, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(SisnError::InvalidInput(format!(
                "tensor shape components must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(SisnError::ShapeMismatch {
                context: "Tensor::new".into(),
                expected: format!("{numel} elements for shape {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(n, c, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
