use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{DsnError, Result};
use crate::ops::{
    batchnorm1d_backward, batchnorm1d_forward_eval, batchnorm1d_forward_train, conv1d_backward_taps,
    conv1d_forward_taps, update_running_stats, BatchNormCache, ConvGrads, Taps,
};
use crate::optim::Parameter;
use crate::tensor::Tensor;
use crate::topology::{KernelMask, SparsityConfig};

/// Same-padded stride-1 convolution with bias, weights `[c_out, c_in, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Parameter,
    pub bias: Parameter,
    taps: Taps,
}

impl Conv1d {
    /// Uniform fan-in scaled initialization, `U(-1/sqrt(c_in*k), 1/sqrt(c_in*k))`.
    pub fn new<R: Rng>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * k) as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<f32> = (0..c_out * c_in * k).map(|_| dist.sample(rng)).collect();
        let b: Vec<f32> = (0..c_out).map(|_| dist.sample(rng)).collect();
        Self::from_parts(
            Tensor::new(vec![c_out, c_in, k], w).expect("shape"),
            Tensor::from_vec(b),
            Taps::dense(c_out, c_in, k),
        )
    }

    pub(crate) fn from_parts(weight: Tensor, bias: Tensor, taps: Taps) -> Self {
        Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
            taps,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn c_in(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.value.dim(2)
    }

    pub fn taps(&self) -> &Taps {
        &self.taps
    }

    pub(crate) fn set_taps(&mut self, taps: Taps) {
        self.taps = taps;
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv1d_forward_taps(x, self.weight.value.data(), self.bias.value.data(), &self.taps)
    }

    /// Accumulates parameter gradients and returns the full [`ConvGrads`].
    ///
    /// With `dense_weight_grad` the returned weight gradient covers every
    /// kernel position, but only active positions are accumulated.
    pub fn backward(&mut self, grad_out: &Tensor, x: &Tensor, dense_weight_grad: bool) -> Result<ConvGrads> {
        let grads = conv1d_backward_taps(grad_out, x, self.weight.value.data(), &self.taps, dense_weight_grad)?;
        if dense_weight_grad {
            let acc = self.weight.grad.data_mut();
            for f in self.taps.active_flat() {
                acc[f] += grads.weight[f];
            }
        } else {
            self.weight.accumulate(&grads.weight);
        }
        self.bias.accumulate(&grads.bias);
        Ok(grads)
    }
}

/// A convolution whose kernels are restricted by a [`KernelMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConvLayer {
    pub conv: Conv1d,
    mask: KernelMask,
    pub cfg: SparsityConfig,
}

impl SparseConvLayer {
    /// Wrap a dense convolution; stored weights outside the mask are zeroed.
    pub fn new(mut conv: Conv1d, mask: KernelMask, cfg: SparsityConfig) -> Result<Self> {
        if mask.c_out() != conv.c_out() || mask.c_in() != conv.c_in() || mask.kernel_size() != conv.kernel_size() {
            return Err(DsnError::Shape("mask and weight shapes differ".into()));
        }
        for (w, &on) in conv.weight.value.data_mut().iter_mut().zip(mask.bits()) {
            if !on {
                *w = 0.0;
            }
        }
        let taps = Taps::from_mask(mask.bits(), mask.c_out(), mask.c_in(), mask.kernel_size());
        conv.set_taps(taps);
        Ok(Self { conv, mask, cfg })
    }

    pub fn mask(&self) -> &KernelMask {
        &self.mask
    }

    /// Replace the mask and rebuild the active tap lists.
    pub fn set_mask(&mut self, mask: KernelMask) {
        self.conv.set_taps(Taps::from_mask(mask.bits(), mask.c_out(), mask.c_in(), mask.kernel_size()));
        self.mask = mask;
    }

    /// Mutable access to mask and weights together; taps are rebuilt afterwards.
    pub fn with_topology<T>(&mut self, f: impl FnOnce(&mut KernelMask, &mut Parameter) -> T) -> T {
        let out = f(&mut self.mask, &mut self.conv.weight);
        let taps = Taps::from_mask(self.mask.bits(), self.mask.c_out(), self.mask.c_in(), self.mask.kernel_size());
        self.conv.set_taps(taps);
        out
    }

    pub fn active_count(&self) -> usize {
        self.conv.taps().active_count()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (y, cache) = batchnorm1d_forward_train(x, self.gamma.value.data(), self.beta.value.data())?;
        let per_channel = x.dim(0) * x.dim(2);
        update_running_stats(&mut self.running_mean, &mut self.running_var, &cache, per_channel);
        Ok((y, cache))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm1d_forward_eval(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &self.running_mean,
            &self.running_var,
        )
    }

    pub fn backward(&mut self, grad_out: &Tensor, cache: &BatchNormCache) -> Result<Tensor> {
        let (gx, gg, gb) = batchnorm1d_backward(grad_out, cache, self.gamma.value.data())?;
        self.gamma.accumulate(&gg);
        self.beta.accumulate(&gb);
        Ok(gx)
    }
}
