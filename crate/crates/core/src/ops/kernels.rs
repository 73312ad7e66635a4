//! Inner loops shared by the convolution paths.
//!
//! All reductions use eight fixed lanes combined in a fixed tree, so results
//! are reproducible bit-for-bit while still vectorizing.

const LANES: usize = 8;

/// Valid output range `t` for which `t + shift` lies in `0..len`.
#[inline]
fn shifted_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// `out[t] += w * x[t + shift]` wherever the source index is in range.
#[inline]
#[cfg(test)]
pub(crate) fn axpy_shifted(out: &mut [f32], x: &[f32], w: f32, shift: isize) {
    debug_assert_eq!(out.len(), x.len());
    let (lo, hi) = shifted_range(out.len(), shift);
    if lo >= hi {
        return;
    }
    let src_lo = (lo as isize + shift) as usize;
    let n = hi - lo;
    let dst = &mut out[lo..hi];
    let src = &x[src_lo..src_lo + n];
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += w * v;
    }
}

/// `sum_t g[t] * x[t + shift]` over the in-range indices.
#[inline]
pub(crate) fn dot_shifted(g: &[f32], x: &[f32], shift: isize) -> f32 {
    let (lo, hi) = shifted_range(g.len(), shift);
    if lo >= hi {
        return 0.0;
    }
    let src_lo = (lo as isize + shift) as usize;
    let n = hi - lo;
    dot(&g[lo..hi], &x[src_lo..src_lo + n])
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    reduce(acc) + tail
}

#[inline]
pub(crate) fn sum(a: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let chunks = a.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    let mut tail = 0.0f32;
    for x in rem {
        tail += x;
    }
    reduce(acc) + tail
}

const BLOCK: usize = 64;

/// `row[t] += sum over (off, w) of w * src[off + t]`, visiting every entry for
/// one block of outputs before moving on so the block stays in registers.
/// Per element the additions happen in entry order, matching repeated
/// [`axpy_shifted`] calls on a zero-padded source.
pub(crate) fn gather_taps(row: &mut [f32], src: &[f32], entries: &[(usize, f32)]) {
    let len = row.len();
    let mut t0 = 0;
    while t0 + BLOCK <= len {
        let mut acc = [0.0f32; BLOCK];
        acc.copy_from_slice(&row[t0..t0 + BLOCK]);
        for &(off, w) in entries {
            let s = &src[off + t0..off + t0 + BLOCK];
            for l in 0..BLOCK {
                acc[l] += w * s[l];
            }
        }
        row[t0..t0 + BLOCK].copy_from_slice(&acc);
        t0 += BLOCK;
    }
    if t0 < len {
        let n = len - t0;
        let mut acc = [0.0f32; BLOCK];
        acc[..n].copy_from_slice(&row[t0..]);
        for &(off, w) in entries {
            let s = &src[off + t0..off + t0 + n];
            for l in 0..n {
                acc[l] += w * s[l];
            }
        }
        row[t0..].copy_from_slice(&acc[..n]);
    }
}

/// Copy `[rows][len]` into `[rows][left + len + right]` with zero borders.
pub(crate) fn pad_rows(x: &[f32], len: usize, left: usize, right: usize) -> Vec<f32> {
    let stride = left + len + right;
    let rows = x.len() / len.max(1);
    let mut out = vec![0.0f32; rows * stride];
    for (dst, src) in out.chunks_exact_mut(stride).zip(x.chunks_exact(len.max(1))) {
        dst[left..left + len].copy_from_slice(src);
    }
    out
}

#[inline]
fn reduce(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}
