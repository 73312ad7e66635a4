//! Stride-1, same-padded 1D convolution over an explicit list of active taps.
//!
//! A dense convolution is the special case in which every tap is active; a
//! masked sparse convolution lists only the taps whose mask bit is set, so
//! inactive positions are never read. Both share the same summation order
//! (input channel, then tap), which makes the sparse path bitwise identical to
//! a dense convolution of the masked weights.
//!
//! Weights are laid out `[c_out][c_in][k]`, activations `[batch][channel][time]`.

use rayon::prelude::*;

use super::kernels::{dot_shifted, gather_taps, pad_rows, sum};
use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

/// Left zero-padding for kernel size `k`; the right side receives `k - 1 - left`.
pub fn pad_left(k: usize) -> usize {
    k / 2
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    // (other channel, tap position)
    entries: Vec<(u32, u32)>,
}

impl Csr {
    fn row(&self, r: usize) -> &[(u32, u32)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// Active (output channel, input channel, tap) triples of a convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taps {
    c_out: usize,
    c_in: usize,
    k: usize,
    by_out: Csr,
    by_in: Csr,
}

impl Taps {
    pub fn dense(c_out: usize, c_in: usize, k: usize) -> Self {
        Self::from_fn(c_out, c_in, k, |_| true)
    }

    /// Build from a `[c_out][c_in][k]` activity mask.
    pub fn from_mask(bits: &[bool], c_out: usize, c_in: usize, k: usize) -> Self {
        assert_eq!(bits.len(), c_out * c_in * k);
        Self::from_fn(c_out, c_in, k, |flat| bits[flat])
    }

    fn from_fn(c_out: usize, c_in: usize, k: usize, active: impl Fn(usize) -> bool) -> Self {
        let mut out_offsets = Vec::with_capacity(c_out + 1);
        let mut out_entries = Vec::new();
        let mut in_rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); c_in];
        out_offsets.push(0);
        for j in 0..c_out {
            for i in 0..c_in {
                for p in 0..k {
                    if active((j * c_in + i) * k + p) {
                        out_entries.push((i as u32, p as u32));
                        in_rows[i].push((j as u32, p as u32));
                    }
                }
            }
            out_offsets.push(out_entries.len());
        }
        let mut in_offsets = Vec::with_capacity(c_in + 1);
        let mut in_entries = Vec::with_capacity(out_entries.len());
        in_offsets.push(0);
        for row in in_rows {
            in_entries.extend(row);
            in_offsets.push(in_entries.len());
        }
        Self {
            c_out,
            c_in,
            k,
            by_out: Csr {
                offsets: out_offsets,
                entries: out_entries,
            },
            by_in: Csr {
                offsets: in_offsets,
                entries: in_entries,
            },
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn active_count(&self) -> usize {
        self.by_out.entries.len()
    }

    /// Flat `[c_out][c_in][k]` indices of the active taps, ascending.
    pub fn active_flat(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.c_out).flat_map(move |j| {
            self.by_out
                .row(j)
                .iter()
                .map(move |&(i, p)| (j * self.c_in + i as usize) * self.k + p as usize)
        })
    }
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Interpret `x` as `[batch][c][len]`; rank-2 inputs are a batch of one.
fn batch_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, l] => Ok((1, *c, *l)),
        [b, c, l] => Ok((*b, *c, *l)),
        s => Err(DsnError::Shape(format!(
            "conv1d input must be [c, L] or [B, c, L], got {s:?}"
        ))),
    }
}

fn out_shape(x: &Tensor, c_out: usize) -> Vec<usize> {
    let mut shape = x.shape().to_vec();
    let n = shape.len();
    shape[n - 2] = c_out;
    shape
}

fn check(x: &Tensor, w: &[f32], bias: &[f32], taps: &Taps) -> Result<(usize, usize)> {
    let (b, c, l) = batch_dims(x)?;
    if c != taps.c_in {
        return Err(DsnError::Shape(format!(
            "conv1d input has {c} channels, weights expect {}",
            taps.c_in
        )));
    }
    if w.len() != taps.c_out * taps.c_in * taps.k {
        return Err(DsnError::Shape(format!(
            "conv1d weight has {} elements, expected {}x{}x{}",
            w.len(),
            taps.c_out,
            taps.c_in,
            taps.k
        )));
    }
    if bias.len() != taps.c_out {
        return Err(DsnError::Shape(format!(
            "conv1d bias has {} elements, expected {}",
            bias.len(),
            taps.c_out
        )));
    }
    Ok((b, l))
}

pub fn conv1d_forward_taps(x: &Tensor, w: &[f32], bias: &[f32], taps: &Taps) -> Result<Tensor> {
    let (batch, len) = check(x, w, bias, taps)?;
    let (c_in, c_out, k) = (taps.c_in, taps.c_out, taps.k);
    let pad = pad_left(k);
    let stride = len + k - 1;
    let entries: Vec<Vec<(usize, f32)>> = (0..c_out)
        .map(|j| {
            taps.by_out
                .row(j)
                .iter()
                .map(|&(i, p)| (i as usize * stride + p as usize, w[(j * c_in + i as usize) * k + p as usize]))
                .collect()
        })
        .collect();
    let mut out = vec![0.0f32; batch * c_out * len];
    let xs = x.data();
    out.par_chunks_mut(c_out * len)
        .enumerate()
        .for_each(|(b, out_b)| {
            let x_b = pad_rows(&xs[b * c_in * len..(b + 1) * c_in * len], len, pad, k - 1 - pad);
            for (j, row) in out_b.chunks_exact_mut(len).enumerate() {
                row.fill(bias[j]);
                gather_taps(row, &x_b, &entries[j]);
            }
        });
    Tensor::new(out_shape(x, c_out), out)
}

/// Reverse pass. Weight gradients are produced for the active taps only unless
/// `dense_weight_grad` is set, in which case every kernel position receives the
/// gradient it would have if it were active.
pub fn conv1d_backward_taps(
    grad_out: &Tensor,
    x: &Tensor,
    w: &[f32],
    taps: &Taps,
    dense_weight_grad: bool,
) -> Result<ConvGrads> {
    let (batch, len) = batch_dims(x).map(|(b, _, l)| (b, l))?;
    let (c_in, c_out, k) = (taps.c_in, taps.c_out, taps.k);
    if grad_out.shape() != out_shape(x, c_out).as_slice() {
        return Err(DsnError::Shape(format!(
            "conv1d grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            out_shape(x, c_out)
        )));
    }
    let zero_bias = vec![0.0; c_out];
    check(x, w, &zero_bias, taps)?;
    let pad = pad_left(k) as isize;
    let xs = x.data();
    let gs = grad_out.data();

    // gx[i][s] = sum w * g[j][s - p + pad]; with g padded by k-1-pad on the
    // left that source sits at offset k-1-p.
    let stride = len + k - 1;
    let entries: Vec<Vec<(usize, f32)>> = (0..c_in)
        .map(|i| {
            taps.by_in
                .row(i)
                .iter()
                .map(|&(j, p)| (j as usize * stride + k - 1 - p as usize, w[(j as usize * c_in + i) * k + p as usize]))
                .collect()
        })
        .collect();
    let mut gx = vec![0.0f32; batch * c_in * len];
    gx.par_chunks_mut(c_in * len)
        .enumerate()
        .for_each(|(b, gx_b)| {
            let g_b = pad_rows(&gs[b * c_out * len..(b + 1) * c_out * len], len, k - 1 - pad as usize, pad as usize);
            for (i, row) in gx_b.chunks_exact_mut(len).enumerate() {
                gather_taps(row, &g_b, &entries[i]);
            }
        });

    let mut gw = vec![0.0f32; c_out * c_in * k];
    let mut gb = vec![0.0f32; c_out];
    gw.par_chunks_mut(c_in * k)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(j, (gw_j, gb_j))| {
            for b in 0..batch {
                let g_row = &gs[(b * c_out + j) * len..(b * c_out + j + 1) * len];
                let x_b = &xs[b * c_in * len..(b + 1) * c_in * len];
                *gb_j += sum(g_row);
                if dense_weight_grad {
                    for i in 0..c_in {
                        let x_row = &x_b[i * len..(i + 1) * len];
                        for p in 0..k {
                            gw_j[i * k + p] += dot_shifted(g_row, x_row, p as isize - pad);
                        }
                    }
                } else {
                    for &(i, p) in taps.by_out.row(j) {
                        let (i, p) = (i as usize, p as usize);
                        let x_row = &x_b[i * len..(i + 1) * len];
                        gw_j[i * k + p] += dot_shifted(g_row, x_row, p as isize - pad);
                    }
                }
            }
        });

    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: gw,
        bias: gb,
    })
}

fn weight_dims(w: &Tensor) -> Result<(usize, usize, usize)> {
    w.expect_rank(3, "conv1d weight")?;
    Ok((w.dim(0), w.dim(1), w.dim(2)))
}

/// Dense same-padded convolution; `x` is `[c_in, L]` or `[B, c_in, L]` and `w`
/// is `[c_out, c_in, k]`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_out, c_in, k) = weight_dims(w)?;
    conv1d_forward_taps(x, w.data(), bias.data(), &Taps::dense(c_out, c_in, k))
}

pub fn conv1d_backward(grad_out: &Tensor, x: &Tensor, w: &Tensor) -> Result<ConvGrads> {
    let (c_out, c_in, k) = weight_dims(w)?;
    conv1d_backward_taps(grad_out, x, w.data(), &Taps::dense(c_out, c_in, k), false)
}
