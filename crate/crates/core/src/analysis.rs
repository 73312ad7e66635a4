//! Parameter and FLOP accounting plus eNRF topology reports.
//!
//! Parameters count every weight of dense layers (convolutions, biases and
//! batch-norm affine terms) plus the active positions of each sparse layer's
//! mask. FLOPs cover one inference pass over one instance: two per
//! multiply-accumulate of every active weight at every output step, one per
//! bias add, and one per element for normalization, ReLU and pooling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::model::{layer_enrf_histogram, BatchNorm, Conv1d, DsnModel, SparseConvLayer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub layer: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub params_total: u64,
    pub params_per_layer: Vec<LayerParams>,
    pub input_len: usize,
    pub flops_per_instance: u64,
    pub enrf_histograms: Vec<BTreeMap<usize, usize>>,
}

/// Active weights of a sparse layer (mask popcount), excluding its bias.
pub fn sparse_layer_params(layer: &SparseConvLayer) -> u64 {
    layer.mask().popcount() as u64
}

fn dense_conv_params(conv: &Conv1d) -> u64 {
    (conv.weight.len() + conv.bias.len()) as u64
}

fn norm_params(norm: &Option<BatchNorm>) -> u64 {
    norm.as_ref().map_or(0, |n| 2 * n.channels() as u64)
}

pub fn params_per_layer(model: &DsnModel) -> Vec<LayerParams> {
    let mut out = Vec::new();
    let mut push = |layer: String, count: u64| out.push(LayerParams { layer, count });
    for (l, m) in model.modules.iter().enumerate() {
        push(format!("module{l}.sparse"), sparse_layer_params(&m.sparse));
        push(format!("module{l}.sparse.bias"), m.sparse.conv.bias.len() as u64);
        push(format!("module{l}.sparse_norm"), norm_params(&m.sparse_norm));
        push(format!("module{l}.pointwise"), dense_conv_params(&m.pointwise));
        push(format!("module{l}.pointwise_norm"), norm_params(&m.pointwise_norm));
    }
    push("final.sparse".into(), sparse_layer_params(&model.final_sparse));
    push("final.sparse.bias".into(), model.final_sparse.conv.bias.len() as u64);
    push("final.norm".into(), norm_params(&model.final_norm));
    push("classifier".into(), dense_conv_params(&model.classifier));
    out
}

pub fn count_params(model: &DsnModel) -> u64 {
    params_per_layer(model).iter().map(|p| p.count).sum()
}

/// `2 * active * len`: multiply-accumulates of a sparse layer at length `len`.
pub fn sparse_conv_flops(layer: &SparseConvLayer, len: usize) -> u64 {
    2 * sparse_layer_params(layer) * len as u64
}

/// Per-instance inference FLOPs at series length `input_len`.
pub fn count_flops(model: &DsnModel, input_len: usize) -> Result<u64> {
    let cfg = &model.cfg;
    if input_len < cfg.pool_mid_len {
        return Err(DsnError::Shape(format!(
            "input length {input_len} is shorter than the intermediate pool length {}",
            cfg.pool_mid_len
        )));
    }
    let len = input_len as u64;
    let c = cfg.channels as u64;
    let norm = |n: &Option<BatchNorm>| if n.is_some() { c * len } else { 0 };
    let relu = c * len;
    let bias = c * len;
    let mut total = 0u64;
    for m in &model.modules {
        total += sparse_conv_flops(&m.sparse, input_len) + bias + norm(&m.sparse_norm) + relu;
        total += 2 * (m.pointwise.weight.len() as u64) * len + bias + norm(&m.pointwise_norm) + relu;
    }
    total += sparse_conv_flops(&model.final_sparse, input_len) + bias + norm(&model.final_norm) + relu;
    total += c * len + c * cfg.pool_mid_len as u64;
    let classes = cfg.num_classes as u64;
    total += 2 * c * classes + classes;
    Ok(total)
}

pub fn enrf_histograms(model: &DsnModel) -> Vec<BTreeMap<usize, usize>> {
    model
        .sparse_layers()
        .iter()
        .map(|l| layer_enrf_histogram(l.mask()))
        .collect()
}

pub fn resource_report(model: &DsnModel, input_len: usize) -> Result<ResourceReport> {
    let per_layer = params_per_layer(model);
    Ok(ResourceReport {
        params_total: per_layer.iter().map(|p| p.count).sum(),
        params_per_layer: per_layer,
        input_len,
        flops_per_instance: count_flops(model, input_len)?,
        enrf_histograms: enrf_histograms(model),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = DsnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" | "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            other => Err(DsnError::Config(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerHistogram {
    layer: usize,
    kernels: usize,
    histogram: BTreeMap<usize, usize>,
}

/// eNRF histogram of every sparse layer, one row per occurring size.
pub fn topology_report(model: &DsnModel, format: ReportFormat) -> String {
    render_histograms(&enrf_histograms(model), format)
}

pub fn render_histograms(hists: &[BTreeMap<usize, usize>], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("layer,enrf,count\n");
            for (l, h) in hists.iter().enumerate() {
                for (size, count) in h {
                    writeln!(out, "{l},{size},{count}").unwrap();
                }
            }
        }
        ReportFormat::JsonLines => {
            for (l, h) in hists.iter().enumerate() {
                let row = LayerHistogram {
                    layer: l,
                    kernels: h.values().sum(),
                    histogram: h.clone(),
                };
                out.push_str(&serde_json::to_string(&row).unwrap());
                out.push('\n');
            }
        }
    }
    out
}

/// Parse the CSV produced by [`topology_report`] back into histograms.
pub fn parse_topology_csv(text: &str) -> Result<Vec<BTreeMap<usize, usize>>> {
    let mut lines = text.lines();
    if lines.next() != Some("layer,enrf,count") {
        return Err(DsnError::Config("topology CSV must start with 'layer,enrf,count'".into()));
    }
    let mut hists: Vec<BTreeMap<usize, usize>> = Vec::new();
    for (no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.trim().parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[layer, size, count]) => {
                if hists.len() <= layer {
                    hists.resize(layer + 1, BTreeMap::new());
                }
                hists[layer].insert(size, count);
            }
            _ => {
                return Err(DsnError::Config(format!(
                    "topology CSV line {}: expected three integers, got '{line}'",
                    no + 2
                )))
            }
        }
    }
    Ok(hists)
}

/// Parse JSON-lines output of [`topology_report`].
pub fn parse_topology_jsonl(text: &str) -> Result<Vec<BTreeMap<usize, usize>>> {
    let mut hists = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: LayerHistogram = serde_json::from_str(line)
            .map_err(|e| DsnError::Config(format!("bad topology JSON line: {e}")))?;
        if hists.len() <= row.layer {
            hists.resize(row.layer + 1, BTreeMap::new());
        }
        hists[row.layer] = row.histogram;
    }
    Ok(hists)
}
