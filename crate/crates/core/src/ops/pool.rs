use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

/// Contiguous bin `[start, end)` covering bin `index` of `out_len` over `len`.
///
/// Bins partition `0..len` and differ in size by at most one.
pub fn pool_bin(index: usize, len: usize, out_len: usize) -> (usize, usize) {
    (index * len / out_len, (index + 1) * len / out_len)
}

fn split(x: &Tensor) -> Result<(usize, usize)> {
    let rank = x.rank();
    if rank < 2 {
        return Err(DsnError::Shape(format!(
            "pooling input must have a time axis, got {:?}",
            x.shape()
        )));
    }
    let len = x.dim(rank - 1);
    Ok((x.len() / len.max(1), len))
}

/// Adaptive average pooling along the last (time) axis.
pub fn adaptive_avg_pool1d(x: &Tensor, out_len: usize) -> Result<Tensor> {
    let (rows, len) = split(x)?;
    if out_len == 0 || out_len > len {
        return Err(DsnError::Shape(format!(
            "adaptive pool output length {out_len} must be in 1..={len}"
        )));
    }
    let mut out = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let row = &x.data()[r * len..(r + 1) * len];
        for o in 0..out_len {
            let (s, e) = pool_bin(o, len, out_len);
            let mut acc = 0.0f32;
            for v in &row[s..e] {
                acc += v;
            }
            out.push(acc / (e - s) as f32);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_len;
    Tensor::new(shape, out)
}

pub fn adaptive_avg_pool1d_backward(grad_out: &Tensor, input_len: usize) -> Result<Tensor> {
    let (rows, out_len) = split(grad_out)?;
    if out_len == 0 || out_len > input_len {
        return Err(DsnError::Shape(format!(
            "adaptive pool output length {out_len} must be in 1..={input_len}"
        )));
    }
    let mut gx = vec![0.0f32; rows * input_len];
    for r in 0..rows {
        for o in 0..out_len {
            let (s, e) = pool_bin(o, input_len, out_len);
            let g = grad_out.data()[r * out_len + o] / (e - s) as f32;
            for v in &mut gx[r * input_len + s..r * input_len + e] {
                *v = g;
            }
        }
    }
    let mut shape = grad_out.shape().to_vec();
    *shape.last_mut().unwrap() = input_len;
    Tensor::new(shape, gx)
}
