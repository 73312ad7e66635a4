//! The acceptance criteria, one function each. Every function returns an
//! [`Outcome`] so the `acceptance` binary can print a verdict per criterion
//! and the ordinary test targets can assert on the cheap ones.

use std::path::PathBuf;
use std::time::Instant;

use dsn::analysis::{count_params, sparse_layer_params};
use dsn::checkpoint::{to_bytes, CheckpointMeta};
use dsn::data::{gen_synth, SynthSpec};
use dsn::model::{enrf_size, layer_enrf_histogram, DsnConfig, DsnModel};
use dsn::ops::{conv1d_forward_taps, Taps};
use dsn::optim::{cosine_lr, OptimConfig, Parameter};
use dsn::topology::{
    decay_fraction, exploration_space_size, init_topology, topology_update_step, GrowMode, InitMode, KernelMask,
    SpaceKind, SparsityConfig, UpdateSchedule, UpdateUnit,
};
use dsn::trainer::{train_with, TrainConfig};
use dsn::{RngState, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::gradcheck;
use super::oracles::{enrf_linear_scan, enumerate_spaces, naive_conv1d};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Fail with `detail` unless `elapsed` is within `limit` seconds.
fn timed(mut o: Outcome, start: Instant, limit: f64) -> Outcome {
    let secs = start.elapsed().as_secs_f64();
    if secs > limit {
        o.pass = false;
    }
    o.detail = format!("{} [{secs:.1}s, limit {limit}s]", o.detail);
    o
}

// ---------------------------------------------------------------- 1

pub fn conv_oracle(configs: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(1).stream("criteria/conv");
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let batch = rng.gen_range(1..=2);
        let (c_in, c_out) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let k = rng.gen_range(1..=9);
        let len = rng.gen_range(1..=32);
        let density = rng.gen_range(0.0..=1.0);
        let bits: Vec<bool> = (0..c_out * c_in * k).map(|_| rng.gen_bool(density)).collect();
        let w: Vec<f32> = (0..bits.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f32> = (0..batch * c_in * len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let xt = Tensor::new(vec![batch, c_in, len], x.clone()).unwrap();
        let out = conv1d_forward_taps(&xt, &w, &bias, &Taps::from_mask(&bits, c_out, c_in, k)).unwrap();
        for b in 0..batch {
            let expect = naive_conv1d(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, &w, &bits, &bias, c_out, k);
            let got = &out.data()[b * c_out * len..(b + 1) * c_out * len];
            for (g, e) in got.iter().zip(&expect) {
                worst = worst.max((*g as f64 - e).abs());
            }
        }
    }
    timed(Outcome::new(worst < 1e-5, format!("{configs} configs, max abs err {worst:.2e}")), start, 10.0)
}

// ---------------------------------------------------------------- 2

pub fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let ops: [(&str, fn(u64) -> f64); 6] = [
        ("conv", |s| gradcheck::conv(s, false)),
        ("masked conv", |s| gradcheck::conv(s, true)),
        ("relu", gradcheck::relu_op),
        ("batchnorm", gradcheck::batchnorm),
        ("pool", gradcheck::pool),
        ("cross-entropy", gradcheck::cross_entropy),
    ];
    let mut worst = (0.0f64, "");
    let mut instances = 0;
    for (name, f) in ops {
        for seed in 0..20 {
            let e = f(seed);
            instances += 1;
            if e > worst.0 || e.is_nan() {
                worst = (e, name);
            }
        }
    }
    let mut e2e_worst = 0.0f64;
    let mut kink_heavy = 0;
    for seed in 0..40 {
        let (e, checked, skipped) = gradcheck::dsn_end_to_end(seed);
        instances += 1;
        e2e_worst = e2e_worst.max(e);
        if skipped * 10 > checked {
            kink_heavy += 1;
        }
    }
    let pass = worst.0 < 1e-3 && e2e_worst < 1e-3 && kink_heavy == 0;
    timed(
        Outcome::new(
            pass,
            format!(
                "{instances} instances, worst op rel err {:.2e} ({}), end-to-end {e2e_worst:.2e}",
                worst.0, worst.1
            ),
        ),
        start,
        60.0,
    )
}

// ---------------------------------------------------------------- 3

fn region_bound(group: usize, k: usize, groups: usize) -> usize {
    ((group + 1) as f64 * k as f64 / groups as f64 + 0.5).floor() as usize
}

fn popcounts(mask: &KernelMask) -> Vec<usize> {
    let per = mask.c_out() / mask.groups();
    let row = mask.c_in() * mask.kernel_size();
    let mut counts = vec![0; mask.groups()];
    for (f, &b) in mask.bits().iter().enumerate() {
        if b {
            counts[f / row / per] += 1;
        }
    }
    counts
}

fn contained(mask: &KernelMask) -> bool {
    let (k, n) = (mask.kernel_size(), mask.groups());
    let per = mask.c_out() / n;
    mask.bits()
        .iter()
        .enumerate()
        .all(|(f, &b)| !b || f % k < region_bound(f / (mask.c_in() * k) / per, k, n))
}

pub fn topology_conservation(applications: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(3).stream("criteria/topology");
    let mut done = 0;
    let mut failures = Vec::new();
    while done < applications {
        let groups = rng.gen_range(1..=4);
        let c_out = groups * rng.gen_range(1..=3);
        let c_in = rng.gen_range(1..=4);
        let k = rng.gen_range(groups..=13);
        let sparsity = *[0.0, 0.25, 0.5, 0.8, 0.9].choose(&mut rng).unwrap();
        let cfg = SparsityConfig { sparsity, groups, kernel_size: k };
        let init = if rng.gen_bool(0.5) { InitMode::Sequential } else { InitMode::Random };
        let mut mask = init_topology(c_out, c_in, &cfg, init, &mut rng).unwrap();
        let values: Vec<f32> = mask
            .bits()
            .iter()
            .map(|&b| if b { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let mut weights = Parameter::new(Tensor::new(vec![c_out, c_in, k], values).unwrap());
        let before_counts = popcounts(&mask);
        for _ in 0..5 {
            let schedule = UpdateSchedule {
                delta_t: 1,
                alpha: rng.gen_range(0.05..=1.0),
                total: rng.gen_range(1..50),
                grow_mode: if rng.gen_bool(0.5) { GrowMode::Random } else { GrowMode::Gradient },
                dynamic: true,
                unit: UpdateUnit::Epoch,
            };
            let grad: Vec<f32> = (0..mask.bits().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = rng.gen_range(0..=schedule.total);
            let prev = mask.bits().to_vec();
            let report = topology_update_step(&mut mask, &mut weights, sparsity, t, &schedule, &mut rng, Some(&grad)).unwrap();
            done += 1;
            let mut ok = popcounts(&mask) == before_counts && contained(&mask);
            for g in &report.groups {
                ok &= g.pruned.len() == g.grown.len();
                ok &= g.pruned.iter().all(|&f| prev[f] && !mask.bits()[f] && weights.value.data()[f] == 0.0);
                ok &= g.grown.iter().all(|&f| !prev[f] && mask.bits()[f]);
                ok &= g.pruned.iter().all(|f| !g.grown.contains(f));
            }
            if !ok && failures.len() < 3 {
                failures.push(format!("c_out={c_out} c_in={c_in} k={k} N={groups} S={sparsity} t={t}"));
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{done} updates, popcounts and containment preserved")
    } else {
        format!("violations, e.g. {}", failures.join("; "))
    };
    timed(Outcome::new(pass, detail), start, 10.0)
}

// ---------------------------------------------------------------- 4

pub fn space_ordering() -> Outcome {
    let start = Instant::now();
    let mut valid = 0;
    let mut enumerated = 0;
    let mut problems = Vec::new();
    for n_l in 1..=32u64 {
        for groups in [2u64, 3, 4] {
            for s in [0.25, 0.5, 0.75] {
                let sizes: Vec<_> = SpaceKind::ALL
                    .iter()
                    .map(|&kind| exploration_space_size(kind, n_l, s, groups))
                    .collect();
                if sizes.iter().any(|r| r.is_err()) {
                    continue;
                }
                let [lw, gr, rg]: [_; 3] = sizes.into_iter().map(|r| r.unwrap()).collect::<Vec<_>>().try_into().unwrap();
                valid += 1;
                if !(rg <= gr && gr <= lw) {
                    problems.push(format!("order N_l={n_l} N={groups} S={s}"));
                }
                if n_l <= 16 {
                    enumerated += 1;
                    let active = (n_l as f64 * (1.0 - s)).round() as u32;
                    let (e_lw, e_gr, e_rg) = enumerate_spaces(n_l as u32, active, groups as u32);
                    if lw != e_lw.into() || gr != e_gr.into() || rg != e_rg.into() {
                        problems.push(format!("enumeration N_l={n_l} N={groups} S={s}"));
                    }
                }
            }
        }
    }
    let pass = problems.is_empty() && valid > 0;
    let detail = if pass {
        format!("{valid} valid configs ordered, {enumerated} cross-checked by enumeration")
    } else {
        format!("{} problems: {}", problems.len(), problems.join("; "))
    };
    timed(Outcome::new(pass, detail), start, 30.0)
}

// ---------------------------------------------------------------- 5

pub fn enrf_coverage() -> Outcome {
    let start = Instant::now();
    let mut masks = 0u64;
    let mut mismatches = 0u64;
    for k in 1..=12usize {
        for m in 0u32..1 << k {
            let row: Vec<bool> = (0..k).map(|p| m >> p & 1 == 1).collect();
            masks += 1;
            if enrf_size(&row) != enrf_linear_scan(&row) {
                mismatches += 1;
            }
        }
    }
    let mut coverage = Vec::new();
    let mut coverage_ok = true;
    for (k, s) in [(15, 0.8), (39, 0.8), (21, 0.5)] {
        let cfg = DsnConfig {
            num_sparse_layers: 3,
            channels: 12,
            kernel_size: k,
            groups: 3,
            sparsity: s,
            ..DsnConfig::default()
        };
        let model = DsnModel::build(cfg, InitMode::Sequential, &RngState::new(5)).unwrap();
        for (l, layer) in model.sparse_layers().iter().enumerate() {
            let mask = layer.mask();
            let hist = layer_enrf_histogram(mask);
            if l == 0 {
                coverage.push(format!("k={k}: {:?}", hist.keys().collect::<Vec<_>>()));
            }
            coverage_ok &= hist.len() == 3;
            let per = mask.c_out() / 3;
            for j in 0..mask.c_out() {
                for i in 0..mask.c_in() {
                    coverage_ok &= enrf_size(mask.kernel_row(j, i)) <= region_bound(j / per, k, 3);
                }
            }
        }
    }
    let pass = mismatches == 0 && coverage_ok;
    timed(
        Outcome::new(
            pass,
            format!("{masks} masks, {mismatches} mismatches; sizes {}", coverage.join(", ")),
        ),
        start,
        10.0,
    )
}

// ---------------------------------------------------------------- 6

pub fn schedule_values() -> Outcome {
    let start = Instant::now();
    let t = 1000;
    let optim = OptimConfig { total_epochs: t, ..OptimConfig::default() };
    let checks = [
        ("decay(0)", decay_fraction(0, 0.5, t), 0.5),
        ("decay(T)", decay_fraction(t, 0.5, t), 0.0),
        ("decay(T/2)", decay_fraction(t / 2, 0.5, t), 0.25),
        ("lr(0)", cosine_lr(0, &optim), 3e-4),
        ("lr(T)", cosine_lr(t, &optim), 1e-4),
    ];
    let bad: Vec<_> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-9)
        .map(|(n, got, _)| format!("{n}={got}"))
        .collect();
    let detail = if bad.is_empty() { "decay 0.5/0.25/0, lr 3e-4 -> 1e-4".to_string() } else { bad.join(", ") };
    timed(Outcome::new(bad.is_empty(), detail), start, 1.0)
}

// ---------------------------------------------------------------- 7

/// Parameter count from the configuration and raw mask bits alone.
fn params_oracle(model: &DsnModel) -> u64 {
    let cfg = &model.cfg;
    let c = cfg.channels as u64;
    let modules = (cfg.num_sparse_layers - 1) as u64;
    let mask_bits: u64 = model
        .sparse_layers()
        .iter()
        .map(|l| l.mask().bits().iter().filter(|&&b| b).count() as u64)
        .sum();
    let sparse_bias = cfg.num_sparse_layers as u64 * c;
    let pointwise = modules * (c * c + c);
    let norms = if cfg.batch_norm { (2 * modules + 1) * 2 * c } else { 0 };
    let classes = cfg.num_classes as u64;
    mask_bits + sparse_bias + pointwise + norms + classes * c + classes
}

pub fn resource_accounting() -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(7).stream("criteria/resources");
    let mut mismatches = 0;
    for seed in 0..50 {
        let groups = rng.gen_range(1..=4);
        let cfg = DsnConfig {
            num_sparse_layers: rng.gen_range(2..=4),
            channels: groups * rng.gen_range(1..=6),
            kernel_size: rng.gen_range(groups..=20),
            groups,
            sparsity: *[0.0, 0.3, 0.5, 0.8, 0.95].choose(&mut rng).unwrap(),
            num_classes: rng.gen_range(2..=5),
            in_vars: rng.gen_range(1..=3),
            pool_mid_len: 4,
            dense: rng.gen_bool(0.2),
            batch_norm: rng.gen_bool(0.7),
        };
        let init = if rng.gen_bool(0.5) { InitMode::Sequential } else { InitMode::Random };
        let model = DsnModel::build(cfg, init, &RngState::new(seed)).unwrap();
        if count_params(&model) != params_oracle(&model) {
            mismatches += 1;
        }
    }
    let mut ratios = Vec::new();
    let mut ratio_ok = true;
    for (k, n) in [(15, 3), (30, 3), (10, 2), (20, 4)] {
        let base = DsnConfig {
            num_sparse_layers: 3,
            channels: 12,
            kernel_size: k,
            groups: n,
            sparsity: 0.8,
            ..DsnConfig::default()
        };
        let sparse_weights = |dense: bool| -> f64 {
            let m = DsnModel::build(DsnConfig { dense, ..base }, InitMode::Sequential, &RngState::new(0)).unwrap();
            m.sparse_layers().iter().map(|l| sparse_layer_params(l)).sum::<u64>() as f64
        };
        let ratio = sparse_weights(false) / sparse_weights(true);
        let target = 0.2 * (n + 1) as f64 / (2 * n) as f64;
        ratio_ok &= (ratio / target - 1.0).abs() <= 0.02;
        ratios.push(format!("k={k}/N={n} {ratio:.4} vs {target:.4}"));
    }
    let pass = mismatches == 0 && ratio_ok;
    timed(
        Outcome::new(pass, format!("50 configs, {mismatches} count mismatches; ratios {}", ratios.join(", "))),
        start,
        5.0,
    )
}

// ---------------------------------------------------------------- 8, 10, 11

/// The desk-scale model trained on the synthetic task.
pub fn synth_model_config() -> DsnConfig {
    DsnConfig {
        num_sparse_layers: 3,
        channels: 48,
        kernel_size: 15,
        groups: 3,
        sparsity: 0.8,
        num_classes: 3,
        ..DsnConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Dynamic,
    Fixed,
    GradientGrow,
}

pub struct SynthRun {
    pub test_acc: f64,
    pub secs: f64,
    pub csv: String,
    pub checkpoint: Vec<u8>,
    /// Per-group popcounts and containment still match the initial topology.
    pub invariants_ok: bool,
    pub updates: usize,
}

pub fn synth_run(seed: u64, epochs: usize, variant: Variant) -> SynthRun {
    let (train, test) = gen_synth(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
    let rng = RngState::new(seed);
    let model = DsnModel::build(synth_model_config(), InitMode::Sequential, &rng).unwrap();
    let initial: Vec<Vec<usize>> = model.sparse_layers().iter().map(|l| popcounts(l.mask())).collect();
    let mut tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
    match variant {
        Variant::Dynamic => {}
        Variant::Fixed => tc.schedule.dynamic = false,
        Variant::GradientGrow => tc.schedule.grow_mode = GrowMode::Gradient,
    }
    let start = Instant::now();
    let (trained, rec) = train_with(model, &train, Some(&test), &tc, |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let invariants_ok = trained
        .sparse_layers()
        .iter()
        .zip(&initial)
        .all(|(l, init)| popcounts(l.mask()) == *init && contained(l.mask()));
    let meta = CheckpointMeta { seed, epoch: rec.best_epoch as u32, input_len: train.length as u32 };
    SynthRun {
        test_acc: rec.final_test_acc.unwrap(),
        secs,
        csv: rec.to_csv(),
        checkpoint: to_bytes(&trained, &meta).unwrap(),
        invariants_ok,
        updates: rec.updates.len(),
    }
}

fn accs(runs: &[SynthRun]) -> String {
    runs.iter().map(|r| format!("{:.3}", r.test_acc)).collect::<Vec<_>>().join(" ")
}

fn mean(runs: &[SynthRun]) -> f64 {
    runs.iter().map(|r| r.test_acc).sum::<f64>() / runs.len() as f64
}

pub fn desk_learning(runs: &[SynthRun]) -> Outcome {
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let pass = runs.iter().all(|r| r.test_acc >= 0.95 && r.secs < 300.0) && runs.len() == 5;
    Outcome::new(pass, format!("test acc {} (need >= 0.95 each), slowest run {slowest:.0}s", accs(runs)))
}

pub fn ablation(dynamic: &[SynthRun], fixed: &[SynthRun], grad: &[SynthRun]) -> Outcome {
    let (md, mf, mg) = (mean(dynamic), mean(fixed), mean(grad));
    let invariants = grad.iter().all(|r| r.invariants_ok && r.updates > 0);
    let pass = md >= mf && invariants && (mg - md).abs() <= 0.02;
    Outcome::new(
        pass,
        format!(
            "mean dynamic {md:.4}, fixed {mf:.4}, gradient grow {mg:.4} (invariants {}; fixed {}; grad {})",
            if invariants { "held" } else { "BROKEN" },
            accs(fixed),
            accs(grad)
        ),
    )
}

pub fn reproducibility(first: &SynthRun, second: &SynthRun) -> Outcome {
    let csv = first.csv == second.csv;
    let ckpt = first.checkpoint == second.checkpoint;
    Outcome::new(
        csv && ckpt,
        format!(
            "run CSV {} ({} bytes), checkpoint {} ({} bytes)",
            if csv { "identical" } else { "differs" },
            first.csv.len(),
            if ckpt { "identical" } else { "differs" },
            first.checkpoint.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

pub fn coffee_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ucr/Coffee")
}

/// One Coffee run through the command-line interface with default
/// hyperparameters and `epochs` epochs; returns test accuracy and seconds.
pub fn coffee_run(seed: u64, epochs: usize) -> (f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    let data = coffee_dir();
    let args: Vec<String> = vec![
        "dsn".into(),
        "--seed".into(),
        seed.to_string(),
        "train".into(),
        "--data".into(),
        data.join("Coffee_TRAIN.txt").display().to_string(),
        "--test".into(),
        data.join("Coffee_TEST.txt").display().to_string(),
        "--out".into(),
        dir.path().display().to_string(),
        "--epochs".into(),
        epochs.to_string(),
        "--eval-every".into(),
        epochs.to_string(),
    ];
    let start = Instant::now();
    let mut sink = Vec::new();
    let code = dsn::cli::run_with(args, &mut sink);
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(code, 0, "train failed: {}", String::from_utf8_lossy(&sink));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    (summary["final_test_acc"].as_f64().unwrap(), secs)
}

pub fn coffee(results: &[(f64, f64)]) -> Outcome {
    let hits = results.iter().filter(|(acc, _)| *acc >= 0.96).count();
    let slowest = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let list: Vec<_> = results.iter().map(|(a, _)| format!("{a:.3}")).collect();
    Outcome::new(
        hits >= 4 && slowest < 900.0,
        format!("test acc {} ({hits}/5 >= 0.96), slowest run {slowest:.0}s", list.join(" ")),
    )
}
