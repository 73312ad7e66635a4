//! Mini-batch Adam training with periodic topology updates.
//!
//! Each epoch shuffles the training set with its own seeded stream, runs
//! one Adam step per batch (the last partial batch is kept) and then, at
//! update points, prunes and regrows every sparse layer. The model with the
//! lowest epoch training loss is returned, with the masks it had at that
//! epoch.
//!
//! The learning-rate and decay horizons are both taken from
//! [`TrainConfig::epochs`] (or the total iteration count for
//! [`UpdateUnit::Iteration`]), overriding `optim.total_epochs` and
//! `schedule.total`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TsDataset;
use crate::error::{DsnError, Result};
use crate::model::DsnModel;
use crate::optim::{adam_step, cosine_lr, OptimConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::topology::{topology_update_step, GrowMode, UpdateSchedule, UpdateUnit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub schedule: UpdateSchedule,
    pub seed: u64,
    /// Evaluate the held-out set every this many epochs (0 disables).
    pub eval_every: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 16,
            optim: OptimConfig::default(),
            schedule: UpdateSchedule::default(),
            seed: 0,
            eval_every: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(DsnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(DsnError::Config("batch_size must be at least 1".into()));
        }
        self.optim.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over all training instances.
    pub loss: f64,
    pub train_acc: f64,
    pub lr: f64,
    /// Whether a topology update ran during or at the end of this epoch.
    pub topo_update: bool,
    pub test_acc: Option<f64>,
}

/// One topology update across all sparse layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    pub epoch: usize,
    /// Value of the schedule clock (epoch or iteration count).
    pub t: usize,
    /// Weights regrown per sparse layer.
    pub changed: Vec<usize>,
    /// Replacements that found no free position, summed over layers.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub updates: Vec<UpdateEvent>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_test_acc: Option<f64>,
}

impl RunRecord {
    /// `epoch,loss,train_acc,lr,topo_update`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,lr,topo_update\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.train_acc,
                e.lr,
                u8::from(e.topo_update)
            );
        }
        out
    }

    /// Epoch with the minimum training loss (first one on ties).
    pub fn argmin_loss(&self) -> Option<usize> {
        self.epochs
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .map(|e| e.epoch)
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 64;

/// Predicted class per instance.
pub fn predict(model: &DsnModel, ds: &TsDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = ds.batch(chunk);
        let logits = model.forward_batch(&x)?;
        let c = model.cfg.num_classes;
        out.extend(logits.data().chunks(c).map(argmax));
    }
    Ok(out)
}

/// Fraction of instances whose argmax logit equals the label.
pub fn evaluate(model: &DsnModel, ds: &TsDataset) -> Result<f64> {
    if ds.num_classes != model.cfg.num_classes {
        return Err(DsnError::Shape(format!(
            "model has {} output classes but the dataset has {}",
            model.cfg.num_classes, ds.num_classes
        )));
    }
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, ds)?;
    let hits = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

fn check_shapes(model: &DsnModel, ds: &TsDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(DsnError::Shape("training set is empty".into()));
    }
    if ds.num_vars != model.cfg.in_vars {
        return Err(DsnError::Shape(format!(
            "model expects {} variates, dataset has {}",
            model.cfg.in_vars, ds.num_vars
        )));
    }
    if ds.num_classes > model.cfg.num_classes {
        return Err(DsnError::Shape(format!(
            "dataset has {} classes, model only {}",
            ds.num_classes, model.cfg.num_classes
        )));
    }
    Ok(())
}

/// Gradient of the mean training loss at every kernel position of every
/// sparse layer, computed on a copy so the model's state is untouched.
fn full_dense_grads(model: &DsnModel, ds: &TsDataset, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut probe = model.clone();
    probe.zero_grad();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total: Option<Vec<Vec<f32>>> = None;
    for chunk in idx.chunks(batch_size) {
        let (x, y) = ds.batch(chunk);
        let (_, _, dense) = probe.loss_and_backward(&x, &y, true)?;
        let dense = dense.expect("requested dense gradients");
        let w = chunk.len() as f32 / ds.len() as f32;
        match &mut total {
            None => total = Some(dense.into_iter().map(|g| g.into_iter().map(|v| v * w).collect()).collect()),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(dense) {
                    for (a, g) in a.iter_mut().zip(g) {
                        *a += g * w;
                    }
                }
            }
        }
    }
    Ok(total.expect("non-empty dataset"))
}

fn apply_update(
    model: &mut DsnModel,
    schedule: &UpdateSchedule,
    t: usize,
    epoch: usize,
    rng: &RngState,
    dense_grads: Option<Vec<Vec<f32>>>,
) -> Result<UpdateEvent> {
    let sparsity = model.cfg.sparsity;
    let mut event = UpdateEvent {
        epoch,
        t,
        changed: Vec::new(),
        shortfall: 0,
    };
    for (l, layer) in model.sparse_layers_mut().into_iter().enumerate() {
        let mut stream = rng.stream(&format!("grow/layer{l}/t{t}"));
        let grad = dense_grads.as_ref().map(|g| g[l].as_slice());
        let report = layer.with_topology(|mask, w| topology_update_step(mask, w, sparsity, t, schedule, &mut stream, grad))?;
        event.changed.push(report.changed());
        event.shortfall += report.groups.iter().map(|g| g.shortfall).sum::<usize>();
    }
    Ok(event)
}

fn step_all(model: &mut DsnModel, lr: f64, optim: &OptimConfig, epoch: usize, batch: usize) -> Result<()> {
    for p in model.params_mut() {
        adam_step(p, lr, optim).map_err(|e| match e {
            DsnError::NonFiniteGradient => DsnError::Divergence {
                epoch,
                batch,
                reason: "non-finite gradient".into(),
            },
            other => other,
        })?;
    }
    Ok(())
}

/// Train without a held-out set.
pub fn train(model: DsnModel, train_set: &TsDataset, cfg: &TrainConfig) -> Result<(DsnModel, RunRecord)> {
    train_with(model, train_set, None, cfg, |_| {})
}

/// Train, optionally scoring `eval_set` every `cfg.eval_every` epochs and
/// at the end (on the returned snapshot). `on_epoch` sees each record as it
/// is produced.
pub fn train_with(
    mut model: DsnModel,
    train_set: &TsDataset,
    eval_set: Option<&TsDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(DsnModel, RunRecord)> {
    cfg.validate()?;
    check_shapes(&model, train_set)?;
    let n = train_set.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut optim = cfg.optim;
    optim.total_epochs = cfg.epochs;
    let mut schedule = cfg.schedule;
    schedule.total = match schedule.unit {
        UpdateUnit::Epoch => cfg.epochs,
        UpdateUnit::Iteration => cfg.epochs * batches,
    };
    // Dense layers have no free positions, so updates would be no-ops.
    let dynamic = schedule.dynamic && !model.cfg.dense;
    let gradient_grow = schedule.grow_mode == GrowMode::Gradient;
    let rng = RngState::new(cfg.seed);

    let mut record = RunRecord {
        epochs: Vec::with_capacity(cfg.epochs),
        updates: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
        final_test_acc: None,
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut iteration = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, &optim);
        order.sort_unstable();
        if cfg.shuffle {
            order.shuffle(&mut rng.stream(&format!("shuffle/epoch{epoch}")));
        }
        let mut loss_sum = 0.0f64;
        let mut hits = 0usize;
        let mut topo_update = false;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            iteration += 1;
            let update_now = dynamic && schedule.unit == UpdateUnit::Iteration && schedule.is_update_point(iteration);
            let (x, y) = train_set.batch(chunk);
            let (loss, logits, dense) = model.loss_and_backward(&x, &y, update_now && gradient_grow)?;
            if !loss.is_finite() {
                return Err(DsnError::Divergence {
                    epoch,
                    batch: b,
                    reason: format!("loss is {loss}"),
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            hits += count_hits(&logits, &y, model.cfg.num_classes);
            if update_now {
                model.zero_grad();
                record.updates.push(apply_update(&mut model, &schedule, iteration, epoch, &rng, dense)?);
                topo_update = true;
            } else {
                step_all(&mut model, lr, &optim, epoch, b)?;
            }
        }
        let loss = loss_sum / n as f64;
        if loss < record.best_loss {
            record.best_loss = loss;
            record.best_epoch = epoch;
            best = model.clone();
        }
        // an update after the last epoch could not influence the returned snapshot
        let last = epoch + 1 == cfg.epochs;
        if dynamic && !last && schedule.unit == UpdateUnit::Epoch && schedule.is_update_point(epoch + 1) {
            let dense = if gradient_grow {
                Some(full_dense_grads(&model, train_set, cfg.batch_size)?)
            } else {
                None
            };
            record.updates.push(apply_update(&mut model, &schedule, epoch + 1, epoch, &rng, dense)?);
            topo_update = true;
        }
        let test_acc = match eval_set {
            Some(ds) if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 => Some(evaluate(&model, ds)?),
            _ => None,
        };
        let rec = EpochRecord {
            epoch,
            loss,
            train_acc: hits as f64 / n as f64,
            lr,
            topo_update,
            test_acc,
        };
        on_epoch(&rec);
        record.epochs.push(rec);
    }
    if let Some(ds) = eval_set {
        record.final_test_acc = Some(evaluate(&best, ds)?);
    }
    Ok((best, record))
}

fn count_hits(logits: &Tensor, labels: &[usize], classes: usize) -> usize {
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}
