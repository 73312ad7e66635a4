//! Batch normalization over `[batch][channel][time]`, statistics per channel.

use super::kernels::{dot, sum};
use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Saved forward state for [`batchnorm1d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
    pub mean: Vec<f32>,
    /// Biased batch variance.
    pub var: Vec<f32>,
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c, l] => Ok((*b, *c, *l)),
        s => Err(DsnError::Shape(format!(
            "batchnorm input must be [B, c, L], got {s:?}"
        ))),
    }
}

/// Training-mode forward using batch statistics.
pub fn batchnorm1d_forward_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
) -> Result<(Tensor, BatchNormCache)> {
    let (batch, c, len) = dims(x)?;
    if gamma.len() != c || beta.len() != c {
        return Err(DsnError::Shape(format!(
            "batchnorm has {} channels, input has {c}",
            gamma.len()
        )));
    }
    let count = (batch * len) as f32;
    let xs = x.data();
    let row = |b: usize, ch: usize| &xs[(b * c + ch) * len..(b * c + ch + 1) * len];

    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    let mut scratch = vec![0.0f32; len];
    for ch in 0..c {
        let mut s = 0.0f32;
        for b in 0..batch {
            s += sum(row(b, ch));
        }
        let m = s / count;
        let mut sq = 0.0f32;
        for b in 0..batch {
            for (d, &v) in scratch.iter_mut().zip(row(b, ch)) {
                *d = v - m;
            }
            sq += dot(&scratch, &scratch);
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut x_hat = vec![0.0f32; xs.len()];
    let mut y = vec![0.0f32; xs.len()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * len;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for t in 0..len {
                let h = (xs[off + t] - m) * s;
                x_hat[off + t] = h;
                y[off + t] = g * h + bt;
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), y)?,
        BatchNormCache {
            x_hat: Tensor::new(shape, x_hat)?,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Inference-mode forward using fixed statistics.
pub fn batchnorm1d_forward_eval(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Result<Tensor> {
    let (batch, c, len) = dims(x)?;
    if gamma.len() != c {
        return Err(DsnError::Shape(format!(
            "batchnorm has {} channels, input has {c}",
            gamma.len()
        )));
    }
    let mut y = x.data().to_vec();
    for b in 0..batch {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            for v in &mut y[(b * c + ch) * len..(b * c + ch + 1) * len] {
                *v = *v * scale + shift;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm1d_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    gamma: &[f32],
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let (batch, c, len) = dims(grad_out)?;
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(DsnError::Shape("batchnorm grad_out shape mismatch".into()));
    }
    let count = (batch * len) as f32;
    let gs = grad_out.data();
    let hs = cache.x_hat.data();
    let mut g_gamma = vec![0.0f32; c];
    let mut g_beta = vec![0.0f32; c];
    for ch in 0..c {
        for b in 0..batch {
            let r = (b * c + ch) * len..(b * c + ch + 1) * len;
            g_beta[ch] += sum(&gs[r.clone()]);
            g_gamma[ch] += dot(&gs[r.clone()], &hs[r]);
        }
    }
    let mut gx = vec![0.0f32; gs.len()];
    for b in 0..batch {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / count;
            let (sb, sg) = (g_beta[ch], g_gamma[ch]);
            let off = (b * c + ch) * len;
            for t in 0..len {
                gx[off + t] = k * (count * gs[off + t] - sb - hs[off + t] * sg);
            }
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), gx)?, g_gamma, g_beta))
}

/// Exponential moving update of running statistics; the running variance
/// tracks the unbiased batch variance.
pub fn update_running_stats(
    running_mean: &mut [f32],
    running_var: &mut [f32],
    cache: &BatchNormCache,
    samples_per_channel: usize,
) {
    let n = samples_per_channel as f32;
    let unbias = if samples_per_channel > 1 { n / (n - 1.0) } else { 1.0 };
    for ch in 0..running_mean.len() {
        running_mean[ch] = (1.0 - BN_MOMENTUM) * running_mean[ch] + BN_MOMENTUM * cache.mean[ch];
        running_var[ch] =
            (1.0 - BN_MOMENTUM) * running_var[ch] + BN_MOMENTUM * cache.var[ch] * unbias;
    }
}
