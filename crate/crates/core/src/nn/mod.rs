//! Layer substrate with explicit forward and backward passes.
//!
//! Every layer has a pure `apply` (no caching, usable from shared references)
//! and a training `forward` that caches what `backward` needs. Calling
//! `backward` without a cached forward pass is a state error. Gradients
//! accumulate into each [`Param`] until an optimizer step clears them.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod optim;

pub use activation::{dropout, relu, Dropout, Relu};
pub use batchnorm::BatchNorm1d;
pub use conv::{Conv1d, ConvTranspose1d};
pub use linear::Linear;
pub use loss::{mse_loss, mse_loss_grad, softmax_cross_entropy, softmax_rows};
pub use optim::{Optimizer, OptimizerKind};

use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// Anything that owns parameters, in a fixed visiting order.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_uniform<T: Real>(dims: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(dims, |_| T::lit(rng.uniform(-bound, bound)))
}

/// Splits `[B, ...]` into batch size and per-item width, treating a tensor
/// whose rank equals `item_rank` as a batch of one.
pub(crate) fn batch_view(dims: &[usize], item_rank: usize) -> Option<(usize, &[usize])> {
    if dims.len() == item_rank {
        Some((1, dims))
    } else if dims.len() == item_rank + 1 {
        Some((dims[0], &dims[1..]))
    } else {
        None
    }
}
