//! Differentiable building blocks: each forward has a matching explicit
//! backward, composed by hand in the model.

mod conv;
mod kernels;
mod loss;
mod norm;
mod pool;

pub use conv::{
    conv1d_backward, conv1d_backward_taps, conv1d_forward, conv1d_forward_taps, pad_left,
    ConvGrads, Taps,
};
pub use loss::{cross_entropy, cross_entropy_batch};
pub use norm::{
    batchnorm1d_backward, batchnorm1d_forward_eval, batchnorm1d_forward_train,
    update_running_stats, BatchNormCache, BN_EPS, BN_MOMENTUM,
};
pub use pool::{adaptive_avg_pool1d, adaptive_avg_pool1d_backward, pool_bin};

use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient of ReLU given the pre-activation input.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(DsnError::Shape("relu grad_out shape mismatch".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}
