//! The `dsn` command-line tool.
//!
//! Subcommands: `train`, `eval`, `analyze`, `space` and `synth`. `train` and
//! `synth` also read an INI-style config file (`--config`) whose keys are
//! the long flag names; sections only group keys for readability. Flags on
//! the command line override the file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! divergence, 5 checkpoint error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::analysis::{render_histograms, resource_report, ReportFormat};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::data::{gen_synth, load_any, write_ts3, z_normalize, Split, SynthSpec, TsDataset};
use crate::error::{DsnError, Result};
use crate::model::{stacked_rf_set, DsnConfig, DsnModel};
use crate::optim::OptimConfig;
use crate::rng::RngState;
use crate::topology::{exploration_space_size, GrowMode, InitMode, SpaceKind, UpdateSchedule, UpdateUnit};
use crate::trainer::{evaluate, train_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "dsn", version, about = "Dynamic sparse networks for time-series classification")]
pub struct Cli {
    /// Seed for every random choice (initialization, shuffling, regrowth, synthesis).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, per-epoch CSV and JSON summary.
    Train(TrainArgs),
    /// Print the accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print parameter, FLOP and eNRF reports for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Print exact exploration-space sizes.
    Space(SpaceArgs),
    /// Write a synthetic train/test pair in TS3 format.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// INI config file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training set (UCR or TS3).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out set scored at the end (and every --eval-every epochs).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,

    /// Number of sparse conv layers including the final one.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub pool_mid_len: Option<usize>,
    /// Dense kernels (no masks, no topology updates).
    #[arg(long)]
    pub dense: bool,
    #[arg(long)]
    pub no_batch_norm: bool,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_init: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    /// Topology update period.
    #[arg(long)]
    pub delta_t: Option<usize>,
    /// Initial fraction of active weights replaced per update.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Keep the initial topology for the whole run.
    #[arg(long)]
    pub fixed_topology: bool,
    /// random | gradient
    #[arg(long)]
    pub grow: Option<GrowMode>,
    /// sequential | random
    #[arg(long)]
    pub init: Option<InitMode>,
    /// epoch | iteration
    #[arg(long)]
    pub update_unit: Option<UpdateUnit>,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Skip per-instance z-normalization of the loaded data.
    #[arg(long)]
    pub no_znorm: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub no_znorm: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// csv | json
    #[arg(long, default_value = "csv")]
    pub format: String,
    /// Also print min/max/cardinality of the stacked receptive-field sets.
    #[arg(long)]
    pub rf_set: bool,
    /// Series length for FLOP counting (defaults to the training length).
    #[arg(long)]
    pub input_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpaceArgs {
    /// Kernel positions in the layer.
    #[arg(long)]
    pub n_l: u64,
    #[arg(long)]
    pub sparsity: f64,
    #[arg(long)]
    pub groups: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for `train.ts3` and `test.ts3`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub warp: Option<f64>,
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub transient_amp: Option<f64>,
}

/// Process exit code for an error.
pub fn exit_code(err: &DsnError) -> i32 {
    match err {
        DsnError::Config(_) | DsnError::Divisibility(_) => 2,
        DsnError::Data { .. } | DsnError::Io { .. } | DsnError::Shape(_) => 3,
        DsnError::Divergence { .. } | DsnError::NonFiniteGradient => 4,
        DsnError::Checkpoint(_) => 5,
    }
}

/// Parse `args` (including the program name), run the command and return
/// the exit code. Diagnostics go to stderr, results to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let text = match &cli.command {
        Command::Train(a) => cmd_train(a, cli.seed)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Space(a) => cmd_space(a)?,
        Command::Synth(a) => cmd_synth(a, cli.seed)?,
    };
    out.write_all(text.as_bytes())
        .map_err(|e| DsnError::io("<stdout>", e))
}

/// Flattened key/value view of a config file. Keys are consumed as they are
/// looked up so that leftovers can be reported as unknown.
struct Settings {
    source: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(p) = path {
            let ini = ini::Ini::load_from_file(p).map_err(|e| DsnError::Config(format!("{}: {e}", p.display())))?;
            for (_, props) in ini.iter() {
                for (k, v) in props.iter() {
                    let key = k.trim().replace('_', "-");
                    if values.insert(key.clone(), v.trim().to_string()).is_some() {
                        return Err(DsnError::Config(format!("{}: key '{key}' given twice", p.display())));
                    }
                }
            }
        }
        Ok(Self {
            source: path.map(Path::to_path_buf),
            values,
        })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                DsnError::Config(format!(
                    "{}: cannot parse '{key} = {v}'",
                    self.source.as_deref().unwrap_or(Path::new("config")).display()
                ))
            }),
        }
    }

    fn value<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let file = self.from_file(key)?;
        Ok(flag.or(file).unwrap_or(default))
    }

    fn opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let file = self.from_file(key)?;
        Ok(flag.or(file))
    }

    fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let file: Option<bool> = self.from_file(key)?;
        Ok(flag || file.unwrap_or(false))
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(DsnError::Config(format!(
                "{}: unknown key '{k}'",
                self.source.as_deref().unwrap_or(Path::new("config")).display()
            ))),
        }
    }
}

/// Refuse to replace existing files unless `overwrite` is set.
fn guard_outputs(paths: &[PathBuf], overwrite: bool) -> Result<()> {
    if overwrite {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(DsnError::Config(format!(
                "{} already exists (pass --overwrite to replace it)",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| DsnError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| DsnError::io(path, e))
}

fn load_dataset(path: &Path, split: Split, znorm: bool) -> Result<TsDataset> {
    let ds = load_any(path, split)?;
    Ok(if znorm { z_normalize(&ds) } else { ds })
}

/// Everything `train` needs, after merging file and flags.
#[derive(Debug)]
pub struct TrainPlan {
    pub data: PathBuf,
    pub test: Option<PathBuf>,
    pub out: PathBuf,
    pub model: DsnConfig,
    pub init: InitMode,
    pub train: TrainConfig,
    pub znorm: bool,
}

pub fn plan_train(a: &TrainArgs, seed: u64) -> Result<TrainPlan> {
    let mut s = Settings::load(a.config.as_deref())?;
    let dm = DsnConfig::default();
    let data: Option<PathBuf> = s.opt("data", a.data.clone())?;
    let test: Option<PathBuf> = s.opt("test", a.test.clone())?;
    let out: Option<PathBuf> = s.opt("out", a.out.clone())?;
    let model = DsnConfig {
        num_sparse_layers: s.value("layers", a.layers, dm.num_sparse_layers)?,
        channels: s.value("channels", a.channels, dm.channels)?,
        kernel_size: s.value("kernel-size", a.kernel_size, dm.kernel_size)?,
        groups: s.value("groups", a.groups, dm.groups)?,
        sparsity: s.value("sparsity", a.sparsity, dm.sparsity)?,
        pool_mid_len: s.value("pool-mid-len", a.pool_mid_len, dm.pool_mid_len)?,
        dense: s.switch("dense", a.dense)?,
        batch_norm: !s.switch("no-batch-norm", a.no_batch_norm)?,
        // Filled in from the data.
        num_classes: dm.num_classes,
        in_vars: dm.in_vars,
    };
    let dt = TrainConfig::default();
    let ds = UpdateSchedule::default();
    let optim = OptimConfig {
        lr_init: s.value("lr-init", a.lr_init, dt.optim.lr_init)?,
        lr_final: s.value("lr-final", a.lr_final, dt.optim.lr_final)?,
        ..dt.optim
    };
    let epochs = s.value("epochs", a.epochs, dt.epochs)?;
    let schedule = UpdateSchedule {
        delta_t: s.value("delta-t", a.delta_t, ds.delta_t)?,
        alpha: s.value("alpha", a.alpha, ds.alpha)?,
        total: epochs,
        grow_mode: s.value("grow", a.grow, ds.grow_mode)?,
        dynamic: !s.switch("fixed-topology", a.fixed_topology)?,
        unit: s.value("update-unit", a.update_unit, ds.unit)?,
    };
    let train = TrainConfig {
        epochs,
        batch_size: s.value("batch-size", a.batch_size, dt.batch_size)?,
        optim: OptimConfig {
            total_epochs: epochs.max(1),
            ..optim
        },
        schedule,
        seed,
        eval_every: s.value("eval-every", a.eval_every, dt.eval_every)?,
        shuffle: !s.switch("no-shuffle", a.no_shuffle)?,
    };
    let init = s.value("init", a.init, InitMode::Sequential)?;
    let znorm = !s.switch("no-znorm", a.no_znorm)?;
    s.finish()?;

    let data = data.ok_or_else(|| DsnError::Config("--data is required".into()))?;
    let out = out.ok_or_else(|| DsnError::Config("--out is required".into()))?;
    // Validate with placeholder data-derived fields before touching files.
    model.validate()?;
    train.validate()?;
    Ok(TrainPlan {
        data,
        test,
        out,
        model,
        init,
        train,
        znorm,
    })
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<String> {
    let mut plan = plan_train(a, seed)?;
    let ckpt = plan.out.join("model.dsn");
    let csv = plan.out.join("run.csv");
    let summary_path = plan.out.join("summary.json");
    guard_outputs(&[ckpt.clone(), csv.clone(), summary_path.clone()], a.overwrite)?;

    let train_set = load_dataset(&plan.data, Split::Train, plan.znorm)?;
    let test_set = match &plan.test {
        Some(p) => Some(load_dataset(p, Split::Test, plan.znorm)?.relabel_like(&train_set)?),
        None => None,
    };
    plan.model.num_classes = train_set.num_classes;
    plan.model.in_vars = train_set.num_vars;
    if train_set.length < plan.model.pool_mid_len {
        return Err(DsnError::data(
            &plan.data,
            format!("series length {} is shorter than pool-mid-len {}", train_set.length, plan.model.pool_mid_len),
        ));
    }
    let model = DsnModel::build(plan.model, plan.init, &RngState::new(seed))?;
    let log_every = if plan.train.eval_every > 0 { plan.train.eval_every } else { 10 };
    let (best, record) = train_with(model, &train_set, test_set.as_ref(), &plan.train, |e| {
        if (e.epoch + 1) % log_every == 0 {
            let test = e.test_acc.map(|a| format!(" test_acc {a:.4}")).unwrap_or_default();
            eprintln!(
                "epoch {:>5}  loss {:.5}  train_acc {:.4}  lr {:.3e}{test}",
                e.epoch, e.loss, e.train_acc, e.lr
            );
        }
    })?;

    create_dir(&plan.out)?;
    let meta = CheckpointMeta {
        seed,
        epoch: record.best_epoch as u32,
        input_len: train_set.length as u32,
    };
    save_checkpoint(&best, &meta, &ckpt)?;
    write_file(&csv, record.to_csv().as_bytes())?;
    let report = resource_report(&best, train_set.length)?;
    let best_row = &record.epochs[record.best_epoch];
    let summary = json!({
        "seed": seed,
        "dynamic": plan.train.schedule.dynamic && !plan.model.dense,
        "grow": plan.train.schedule.grow_mode.to_string(),
        "init": plan.init.to_string(),
        "update_unit": plan.train.schedule.unit.to_string(),
        "epochs": plan.train.epochs,
        "best_epoch": record.best_epoch,
        "best_loss": record.best_loss,
        "best_train_acc": best_row.train_acc,
        "final_test_acc": record.final_test_acc,
        "topology_updates": record.updates.len(),
        "mask_changes": record.updates.iter().map(|u| u.changed.iter().sum::<usize>()).sum::<usize>(),
        "regrow_shortfall": record.updates.iter().map(|u| u.shortfall).sum::<usize>(),
        "params": report.params_total,
        "flops_per_instance": report.flops_per_instance,
        "input_len": train_set.length,
        "model": plan.model,
        "train": plan.train,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&summary_path, text.as_bytes())?;

    let mut msg = format!(
        "best epoch {} (loss {:.6}), params {}, flops {}\n",
        record.best_epoch, record.best_loss, report.params_total, report.flops_per_instance
    );
    if let Some(acc) = record.final_test_acc {
        let _ = writeln!(msg, "test accuracy {acc:.4}");
    }
    let _ = writeln!(msg, "wrote {}", plan.out.display());
    Ok(msg)
}

fn checkpoint_or_exit(path: &Path) -> Result<(DsnModel, CheckpointMeta)> {
    load_checkpoint(path).map_err(|e| match e {
        DsnError::Io { path, source } => DsnError::Checkpoint(format!("{}: {source}", path.display())),
        other => other,
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let (model, _) = checkpoint_or_exit(&a.checkpoint)?;
    let ds = load_dataset(&a.data, Split::Test, !a.no_znorm)?;
    let acc = evaluate(&model, &ds)?;
    Ok(format!("accuracy {acc:.6} ({} instances)\n", ds.len()))
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<String> {
    let format: ReportFormat = a.format.parse()?;
    let (model, meta) = checkpoint_or_exit(&a.checkpoint)?;
    let input_len = match a.input_len {
        Some(n) => n,
        None if meta.input_len > 0 => meta.input_len as usize,
        None => {
            return Err(DsnError::Config(
                "checkpoint does not record the input length; pass --input-len".into(),
            ))
        }
    };
    let report = resource_report(&model, input_len)?;
    let sets: Vec<_> = report
        .enrf_histograms
        .iter()
        .map(|h| h.keys().copied().collect())
        .collect();
    let module_path = stacked_rf_set(&sets[..sets.len() - 1]);
    let all_layers = stacked_rf_set(&sets);
    let rf_rows = [("modules", &module_path), ("all_sparse", &all_layers)];

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("metric,value\n");
            let _ = writeln!(out, "params_total,{}", report.params_total);
            let _ = writeln!(out, "flops_per_instance,{}", report.flops_per_instance);
            let _ = writeln!(out, "input_len,{}", report.input_len);
            out.push_str("\nlayer,params\n");
            for p in &report.params_per_layer {
                let _ = writeln!(out, "{},{}", p.layer, p.count);
            }
            out.push('\n');
            out.push_str(&render_histograms(&report.enrf_histograms, format));
            if a.rf_set {
                out.push_str("\nrf_path,min,max,cardinality\n");
                for (name, set) in rf_rows {
                    let (lo, hi) = (set.first().copied().unwrap_or(0), set.last().copied().unwrap_or(0));
                    let _ = writeln!(out, "{name},{lo},{hi},{}", set.len());
                }
            }
        }
        ReportFormat::JsonLines => {
            let head = json!({
                "params_total": report.params_total,
                "flops_per_instance": report.flops_per_instance,
                "input_len": report.input_len,
                "params_per_layer": report.params_per_layer,
            });
            let _ = writeln!(out, "{head}");
            out.push_str(&render_histograms(&report.enrf_histograms, format));
            if a.rf_set {
                for (name, set) in rf_rows {
                    let row = json!({
                        "rf_path": name,
                        "min": set.first().copied().unwrap_or(0),
                        "max": set.last().copied().unwrap_or(0),
                        "cardinality": set.len(),
                    });
                    let _ = writeln!(out, "{row}");
                }
            }
        }
    }
    Ok(out)
}

fn cmd_space(a: &SpaceArgs) -> Result<String> {
    let mut sizes = Vec::new();
    for kind in SpaceKind::ALL {
        sizes.push((kind, exploration_space_size(kind, a.n_l, a.sparsity, a.groups)?));
    }
    let mut out = String::new();
    for (kind, size) in &sizes {
        let _ = writeln!(out, "{kind}: {size}");
    }
    let holds = sizes[2].1 <= sizes[1].1 && sizes[1].1 <= sizes[0].1;
    let _ = writeln!(
        out,
        "grouped_regions <= grouped <= layerwise: {}",
        if holds { "ordering holds" } else { "ordering violated" }
    );
    Ok(out)
}

pub fn plan_synth(a: &SynthArgs, seed: u64) -> Result<(SynthSpec, PathBuf)> {
    let mut s = Settings::load(a.config.as_deref())?;
    let classes = s.value("classes", a.classes, 3)?;
    let d = SynthSpec::for_classes(classes);
    let spec = SynthSpec {
        train_per_class: s.value("train-per-class", a.train_per_class, d.train_per_class)?,
        test_per_class: s.value("test-per-class", a.test_per_class, d.test_per_class)?,
        length: s.value("length", a.length, d.length)?,
        noise: s.value("noise", a.noise, d.noise)?,
        warp: s.value("warp", a.warp, d.warp)?,
        offset: s.value("offset", a.offset, d.offset)?,
        transient_amp: s.value("transient-amp", a.transient_amp, d.transient_amp)?,
        seed,
        ..d
    };
    let out: Option<PathBuf> = s.opt("out", a.out.clone())?;
    s.finish()?;
    spec.validate()?;
    let out = out.ok_or_else(|| DsnError::Config("--out is required".into()))?;
    Ok((spec, out))
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<String> {
    let (spec, dir) = plan_synth(a, seed)?;
    let train_path = dir.join("train.ts3");
    let test_path = dir.join("test.ts3");
    guard_outputs(&[train_path.clone(), test_path.clone()], a.overwrite)?;
    let (train, test) = gen_synth(&spec)?;
    create_dir(&dir)?;
    write_ts3(&train, &train_path)?;
    write_ts3(&test, &test_path)?;
    Ok(format!(
        "wrote {} ({} instances) and {} ({} instances)\n",
        train_path.display(),
        train.len(),
        test_path.display(),
        test.len()
    ))
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    if let Ok(v) = std::env::var("DSN_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) => {
                // 0 lets rayon pick; the pool can only be configured once per process.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => {
                eprintln!("error: DSN_THREADS must be a non-negative integer, got '{v}'");
                return 2;
            }
        }
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let code = run_with(std::env::args_os(), &mut lock);
    let _ = lock.flush();
    code
}
