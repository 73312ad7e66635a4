//! Reference implementations written independently of the library code
//! paths they check: straightforward loops in f64, exhaustive enumeration.

use std::collections::BTreeSet;

/// Direct sliding-window convolution with zero padding, `floor(k/2)` on the
/// left. `x` is `[c_in][len]`, `w` is `[c_out][c_in][k]`, masked by `mask`.
pub fn naive_conv1d(
    x: &[f32],
    c_in: usize,
    len: usize,
    w: &[f32],
    mask: &[bool],
    bias: &[f32],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let left = k / 2;
    let mut out = vec![0.0f64; c_out * len];
    for o in 0..c_out {
        for t in 0..len {
            let mut acc = bias[o] as f64;
            for i in 0..c_in {
                for p in 0..k {
                    let idx = (o * c_in + i) * k + p;
                    if !mask[idx] {
                        continue;
                    }
                    let src = t as isize + p as isize - left as isize;
                    if src >= 0 && (src as usize) < len {
                        acc += w[idx] as f64 * x[i * len + src as usize] as f64;
                    }
                }
            }
            out[o * len + t] = acc;
        }
    }
    out
}

/// Span from the first to the last set position, by scanning every pair.
pub fn enrf_linear_scan(row: &[bool]) -> usize {
    let mut best = 0;
    for a in 0..row.len() {
        for b in a..row.len() {
            if row[a] && row[b] {
                best = best.max(b - a + 1);
            }
        }
    }
    best
}

/// Magnitude spectrum by the O(n^2) DFT definition, bins `0..=n/2`.
pub fn dft_magnitude(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|f| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (f * t) as f64 / n as f64;
                re += v as f64 * ang.cos();
                im += v as f64 * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Nearest-centroid classifier on DFT magnitudes.
pub fn fft_centroid_accuracy(train: &[(Vec<f32>, usize)], test: &[(Vec<f32>, usize)], classes: usize) -> f64 {
    let feats = |s: &[f32]| dft_magnitude(s);
    let dim = feats(&train[0].0).len();
    let mut centroids = vec![vec![0.0f64; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (s, y) in train {
        for (c, v) in centroids[*y].iter_mut().zip(feats(s)) {
            *c += v;
        }
        counts[*y] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= (*n).max(1) as f64);
    }
    let mut hits = 0;
    for (s, y) in test {
        let f = feats(s);
        let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let pred = (0..classes)
            .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
            .unwrap();
        hits += usize::from(pred == *y);
    }
    hits as f64 / test.len() as f64
}

/// Number of `k`-subsets of `0..n`, counted by walking all `2^n` bitmasks.
pub fn count_subsets(n: u32, k: u32) -> u64 {
    (0u64..1 << n).filter(|m| m.count_ones() == k).count() as u64
}

/// Exploration-space sizes by enumeration: layer-wise picks `a` of `n_l`
/// positions; grouped picks `a/N` in each of `N` equal blocks; with regions,
/// group `i` picks within its first `i*n_l/N^2` positions.
pub fn enumerate_spaces(n_l: u32, active: u32, groups: u32) -> (u64, u64, u64) {
    let layerwise = count_subsets(n_l, active);
    let per = active / groups;
    let block = count_subsets(n_l / groups, per);
    let grouped = block.pow(groups);
    let mut regions = 1u64;
    for i in 1..=groups {
        regions *= count_subsets(i * n_l / (groups * groups), per);
    }
    (layerwise, grouped, regions)
}

/// Stacked receptive fields by enumerating every combination of sizes.
pub fn stacked_rf_bruteforce(sets: &[Vec<usize>]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut idx = vec![0usize; sets.len()];
    loop {
        let sum: usize = idx.iter().zip(sets).map(|(&i, s)| s[i]).sum();
        out.insert(sum.saturating_sub(sets.len() - 1));
        let mut d = 0;
        loop {
            if d == sets.len() {
                return out;
            }
            idx[d] += 1;
            if idx[d] < sets[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = numeric.iter().zip(analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference of `f` with respect to `values[i]`, using the step
/// that is actually representable in f32.
pub fn central_diff(values: &mut [f32], i: usize, h: f32, mut f: impl FnMut(&[f32]) -> f64) -> f64 {
    let orig = values[i];
    let up = orig + h;
    let down = orig - h;
    values[i] = up;
    let fu = f(values);
    values[i] = down;
    let fd = f(values);
    values[i] = orig;
    (fu - fd) / (up as f64 - down as f64)
}
