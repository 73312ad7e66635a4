//! Central finite-difference checks of every backward pass.
//!
//! Each check draws a random instance, contracts the op output with a random
//! weight vector `r` (so the scalar objective exercises every output), and
//! compares analytic gradients with central differences at step `H`.

use dsn::model::{DsnConfig, DsnModel};
use dsn::ops::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, batchnorm1d_backward, batchnorm1d_forward_train,
    conv1d_backward_taps, conv1d_forward_taps, cross_entropy_batch, relu, relu_backward, Taps,
};
use dsn::topology::InitMode;
use dsn::{RngState, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracles::{central_diff, rel_error};

pub const H: f32 = 1e-3;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dot(r: &[f32], y: &[f32]) -> f64 {
    r.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Finite differences of `f` at every index of `values` listed in `at`.
fn numeric(values: &mut [f32], at: &[usize], mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    at.iter().map(|&i| central_diff(values, i, H, &mut f)).collect()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Convolution through the tap lists, optionally masked. Returns the worst
/// relative error over the input, weight and bias gradients.
pub fn conv(seed: u64, masked: bool) -> f64 {
    let mut rng = RngState::new(seed).stream("gradcheck/conv");
    let (b, c_in, c_out) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let k = rng.gen_range(1..7);
    let len = rng.gen_range(k.max(2)..12);
    let mut x = uniform(&mut rng, b * c_in * len, 1.0);
    let mut w = uniform(&mut rng, c_out * c_in * k, 1.0);
    let mut bias = uniform(&mut rng, c_out, 1.0);
    let bits: Vec<bool> = (0..w.len()).map(|_| !masked || rng.gen_bool(0.6)).collect();
    let taps = Taps::from_mask(&bits, c_out, c_in, k);
    let r = uniform(&mut rng, b * c_out * len, 1.0);
    let shape = vec![b, c_in, len];

    let go = Tensor::new(vec![b, c_out, len], r.clone()).unwrap();
    let xt = Tensor::new(shape.clone(), x.clone()).unwrap();
    let grads = conv1d_backward_taps(&go, &xt, &w, &taps, false).unwrap();

    let fwd = |x: &[f32], w: &[f32], bias: &[f32]| {
        let xt = Tensor::new(shape.clone(), x.to_vec()).unwrap();
        dot(&r, conv1d_forward_taps(&xt, w, bias, &taps).unwrap().data())
    };
    let (w0, b0, x0) = (w.clone(), bias.clone(), x.clone());
    let gx = numeric(&mut x, &all(x0.len()), |x| fwd(x, &w0, &b0));
    let active: Vec<usize> = (0..w0.len()).filter(|&i| bits[i]).collect();
    let gw = numeric(&mut w, &active, |w| fwd(&x0, w, &b0));
    let gb = numeric(&mut bias, &all(b0.len()), |bias| fwd(&x0, &w0, bias));
    let aw: Vec<f64> = active.iter().map(|&i| grads.weight[i] as f64).collect();
    rel_error(&gx, &as_f64(grads.input.data()))
        .max(rel_error(&gw, &aw))
        .max(rel_error(&gb, &as_f64(&grads.bias)))
}

/// ReLU, with inputs kept at least `2H` away from the kink.
pub fn relu_op(seed: u64) -> f64 {
    let mut rng = RngState::new(seed).stream("gradcheck/relu");
    let n = rng.gen_range(2..40);
    let mut x: Vec<f32> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.01f32..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let r = uniform(&mut rng, n, 1.0);
    let xt = Tensor::new(vec![n], x.clone()).unwrap();
    let g = relu_backward(&Tensor::new(vec![n], r.clone()).unwrap(), &xt).unwrap();
    let num = numeric(&mut x, &all(n), |x| dot(&r, relu(&Tensor::new(vec![n], x.to_vec()).unwrap()).data()));
    rel_error(&num, &as_f64(g.data()))
}

/// Training-mode batch norm: gradients for input, scale and shift.
pub fn batchnorm(seed: u64) -> f64 {
    let mut rng = RngState::new(seed).stream("gradcheck/bn");
    let (b, c, len) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..10));
    let shape = vec![b, c, len];
    let mut x = uniform(&mut rng, b * c * len, 2.0);
    let mut gamma: Vec<f32> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut beta = uniform(&mut rng, c, 1.0);
    let r = uniform(&mut rng, x.len(), 1.0);
    let fwd = |x: &[f32], g: &[f32], bt: &[f32]| {
        let xt = Tensor::new(shape.clone(), x.to_vec()).unwrap();
        dot(&r, batchnorm1d_forward_train(&xt, g, bt).unwrap().0.data())
    };
    let xt = Tensor::new(shape.clone(), x.clone()).unwrap();
    let (_, cache) = batchnorm1d_forward_train(&xt, &gamma, &beta).unwrap();
    let go = Tensor::new(shape.clone(), r.clone()).unwrap();
    let (gx, gg, gb) = batchnorm1d_backward(&go, &cache, &gamma).unwrap();
    let (x0, g0, b0) = (x.clone(), gamma.clone(), beta.clone());
    let nx = numeric(&mut x, &all(x0.len()), |x| fwd(x, &g0, &b0));
    let ng = numeric(&mut gamma, &all(c), |g| fwd(&x0, g, &b0));
    let nb = numeric(&mut beta, &all(c), |bt| fwd(&x0, &g0, bt));
    rel_error(&nx, &as_f64(gx.data()))
        .max(rel_error(&ng, &as_f64(&gg)))
        .max(rel_error(&nb, &as_f64(&gb)))
}

pub fn pool(seed: u64) -> f64 {
    let mut rng = RngState::new(seed).stream("gradcheck/pool");
    let (b, c, len) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..20));
    let out_len = rng.gen_range(1..=len);
    let shape = vec![b, c, len];
    let mut x = uniform(&mut rng, b * c * len, 1.0);
    let r = uniform(&mut rng, b * c * out_len, 1.0);
    let go = Tensor::new(vec![b, c, out_len], r.clone()).unwrap();
    let g = adaptive_avg_pool1d_backward(&go, len).unwrap();
    let num = numeric(&mut x, &all(b * c * len), |x| {
        dot(&r, adaptive_avg_pool1d(&Tensor::new(shape.clone(), x.to_vec()).unwrap(), out_len).unwrap().data())
    });
    rel_error(&num, &as_f64(g.data()))
}

/// Mean cross-entropy of a batch, with the objective evaluated in f64.
pub fn cross_entropy(seed: u64) -> f64 {
    let mut rng = RngState::new(seed).stream("gradcheck/ce");
    let (b, c) = (rng.gen_range(1..5), rng.gen_range(2..6));
    let mut z = uniform(&mut rng, b * c, 3.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
    let (_, g) = cross_entropy_batch(&Tensor::new(vec![b, c], z.clone()).unwrap(), &labels).unwrap();
    let num = numeric(&mut z, &all(b * c), |z| mean_ce(z, &labels, c));
    rel_error(&num, &as_f64(g.data()))
}

fn mean_ce(logits: &[f32], labels: &[usize], c: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(c).zip(labels) {
        let m = row.iter().fold(f64::MIN, |a, &v| a.max(v as f64));
        let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        total += lse - row[y] as f64;
    }
    total / labels.len() as f64
}

/// A two-sparse-layer DSN (one module plus the final layer) end to end:
/// every trainable parameter, through batch norm, ReLU, pooling and the
/// classifier, against the mean cross-entropy.
///
/// Central differences straddling a ReLU kink return the mean of the two
/// one-sided slopes, so inputs are redrawn until every ReLU input is at
/// least `MARGIN` from zero. Coordinates whose estimates at `H` and `H/2`
/// still disagree by more than `AGREE` (relative) plus `NOISE` are counted in the third return value
/// and excluded; the second is the number of coordinates compared.
pub fn dsn_end_to_end(seed: u64) -> (f64, usize, usize) {
    dsn_end_to_end_with(seed, |_| {})
}

const MARGIN: f32 = 2e-3;
/// Largest relative gap allowed between the `H` and `H/2` estimates.
const AGREE: f64 = 2e-3;
/// Absolute slack for f32 rounding in the objective (about 1e-7 / H).
const NOISE: f64 = 2e-4;

pub fn dsn_end_to_end_with(seed: u64, tweak: impl Fn(&mut DsnConfig)) -> (f64, usize, usize) {
    let mut rng = RngState::new(seed).stream("gradcheck/dsn");
    let mut cfg = DsnConfig {
        num_sparse_layers: 2,
        channels: 3 * rng.gen_range(1..3),
        kernel_size: rng.gen_range(3..8),
        groups: 3,
        sparsity: 0.5,
        num_classes: rng.gen_range(2..4),
        in_vars: rng.gen_range(1..3),
        pool_mid_len: 2,
        dense: false,
        batch_norm: true,
    };
    tweak(&mut cfg);
    let model0 = DsnModel::build(cfg, InitMode::Random, &RngState::new(seed)).unwrap();
    let (b, len) = (rng.gen_range(2..4), rng.gen_range(4..10));
    let (x, labels) = loop {
        let x = Tensor::new(vec![b, cfg.in_vars, len], uniform(&mut rng, b * cfg.in_vars * len, 1.0)).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
        let (_, cache) = model0.clone().forward_train(&x).unwrap();
        if cache.relu_margin() >= MARGIN {
            break (x, labels);
        }
    };

    let mut analytic_model = model0.clone();
    analytic_model.loss_and_backward(&x, &labels, false).unwrap();
    let analytic: Vec<Vec<f32>> = analytic_model.params_mut().into_iter().map(|p| p.grad.data().to_vec()).collect();

    let objective = |pi: usize, i: usize, delta: f32| {
        let mut m = model0.clone();
        let mut params = m.params_mut();
        let v = &mut params[pi].value.data_mut()[i];
        let orig = *v;
        *v = orig + delta;
        let actual = *v as f64 - orig as f64;
        drop(params);
        let (logits, _) = m.forward_train(&x).unwrap();
        (mean_ce(logits.data(), &labels, cfg.num_classes), actual)
    };
    let diff = |pi: usize, i: usize, h: f32| {
        let (fu, du) = objective(pi, i, h);
        let (fd, dd) = objective(pi, i, -h);
        (fu - fd) / (du - dd)
    };

    let (mut numeric_all, mut analytic_all) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let d1 = diff(pi, i, H);
            let d2 = diff(pi, i, H / 2.0);
            let scale = d1.abs().max(d2.abs());
            if (d1 - d2).abs() > AGREE * scale + NOISE {
                skipped += 1;
                continue;
            }
            numeric_all.push(d1);
            analytic_all.push(a as f64);
        }
    }
    (rel_error(&numeric_all, &analytic_all), numeric_all.len(), skipped)
}
