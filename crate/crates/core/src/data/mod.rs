//! Dataset loading, normalization and the synthetic multi-scale generator.
//!
//! Two text formats are supported. UCR files hold one instance per line: a
//! label followed by the series values, separated by commas, tabs or spaces.
//! TS3 files hold multivariate data:
//!
//! ```text
//! TS3 <N> <m> <n> <c>
//! <label>
//! <m lines of n comma-separated values>
//! ...
//! ```

mod synth;

pub use synth::{gen_synth, SynthSpec};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Equal-length (multivariate) series with dense labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsDataset {
    /// Each instance is `[num_vars, length]`.
    pub instances: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_vars: usize,
    pub length: usize,
    pub num_classes: usize,
    /// Original label text for each class index.
    pub class_names: Vec<String>,
    pub split: Split,
}

impl TsDataset {
    /// Checks shapes, label range and finiteness.
    pub fn new(
        instances: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        if instances.len() != labels.len() {
            return Err(DsnError::Shape(format!(
                "{} instances but {} labels",
                instances.len(),
                labels.len()
            )));
        }
        if class_names.len() != num_classes {
            return Err(DsnError::Shape(format!(
                "{} class names for {num_classes} classes",
                class_names.len()
            )));
        }
        let (num_vars, length) = match instances.first() {
            Some(t) => match t.shape() {
                [m, n] => (*m, *n),
                s => return Err(DsnError::Shape(format!("instances must be [m, n], got {s:?}"))),
            },
            None => (0, 0),
        };
        for (i, (t, &y)) in instances.iter().zip(&labels).enumerate() {
            if t.shape() != [num_vars, length] {
                return Err(DsnError::Shape(format!(
                    "instance {i} has shape {:?}, expected [{num_vars}, {length}]",
                    t.shape()
                )));
            }
            if y >= num_classes {
                return Err(DsnError::Shape(format!("instance {i} has label {y} >= {num_classes} classes")));
            }
            if !t.all_finite() {
                return Err(DsnError::Shape(format!("instance {i} contains non-finite values")));
            }
        }
        Ok(Self {
            instances,
            labels,
            num_vars,
            length,
            num_classes,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Stack the given instances into `[B, m, n]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.num_vars * self.length;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.instances[i].data());
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(vec![indices.len(), self.num_vars, self.length], data)
            .expect("instances share one shape");
        (t, labels)
    }

    /// Re-express labels in `reference`'s class indexing, matching class
    /// names numerically when both parse as numbers. Needed when a test file
    /// lacks some classes, which would otherwise shift its remapping.
    pub fn relabel_like(&self, reference: &TsDataset) -> Result<TsDataset> {
        let same = |a: &str, b: &str| match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x == y,
            _ => a == b,
        };
        let mapping = self
            .class_names
            .iter()
            .map(|name| {
                reference
                    .class_names
                    .iter()
                    .position(|r| same(name, r))
                    .ok_or_else(|| DsnError::Shape(format!("label '{name}' does not occur in the training set")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mut out = self.clone();
        out.labels = self.labels.iter().map(|&y| mapping[y]).collect();
        out.num_classes = reference.num_classes;
        out.class_names = reference.class_names.clone();
        Ok(out)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn parse_value(tok: &str, path: &Path, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| DsnError::data(path, format!("line {line}: cannot parse {what} {tok:?}")))?;
    if !v.is_finite() {
        return Err(DsnError::data(path, format!("line {line}: non-finite {what} {tok:?}")));
    }
    Ok(v)
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Map raw numeric labels to `0..c` in ascending numeric order.
fn remap_labels(raw: &[(f64, String)]) -> (Vec<usize>, Vec<String>) {
    let mut distinct: Vec<(f64, String)> = Vec::new();
    for (v, text) in raw {
        if !distinct.iter().any(|(d, _)| d == v) {
            distinct.push((*v, text.clone()));
        }
    }
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0));
    let labels = raw
        .iter()
        .map(|(v, _)| distinct.iter().position(|(d, _)| d == v).expect("present"))
        .collect();
    (labels, distinct.into_iter().map(|(_, t)| t).collect())
}

pub fn load_ucr(path: impl AsRef<Path>, split: Split) -> Result<TsDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
    parse_ucr(&text, path, split)
}

/// Parse UCR text; `path` is used only for diagnostics.
pub fn parse_ucr(text: &str, path: &Path, split: Split) -> Result<TsDataset> {
    let mut raw_labels = Vec::new();
    let mut series = Vec::new();
    let mut length = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let label = parse_value(fields[0], path, lineno, "label")?;
        let values = fields[1..]
            .iter()
            .map(|t| parse_value(t, path, lineno, "value").map(|v| v as f32))
            .collect::<Result<Vec<f32>>>()?;
        if values.is_empty() {
            return Err(DsnError::data(path, format!("line {lineno}: no values after the label")));
        }
        match length {
            None => length = Some(values.len()),
            Some(n) if n != values.len() => {
                return Err(DsnError::data(
                    path,
                    format!("line {lineno}: {} values, expected {n}", values.len()),
                ))
            }
            _ => {}
        }
        raw_labels.push((label, fields[0].to_string()));
        series.push(values);
    }
    if series.is_empty() {
        return Err(DsnError::data(path, "no instances"));
    }
    let (labels, class_names) = remap_labels(&raw_labels);
    let n = length.expect("non-empty");
    let instances = series
        .into_iter()
        .map(|v| Tensor::new(vec![1, n], v).expect("length checked"))
        .collect();
    let c = class_names.len();
    TsDataset::new(instances, labels, c, class_names, split)
}

pub fn load_ts3(path: impl AsRef<Path>, split: Split) -> Result<TsDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
    parse_ts3(&text, path, split)
}

pub fn parse_ts3(text: &str, path: &Path, split: Split) -> Result<TsDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| DsnError::data(path, "empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "TS3" {
        return Err(DsnError::data(path, format!("line 1: expected `TS3 <N> <m> <n> <c>`, got {header:?}")));
    }
    let num = |i: usize, name: &str| -> Result<usize> {
        toks[i]
            .parse()
            .map_err(|_| DsnError::data(path, format!("line 1: bad {name} {:?}", toks[i])))
    };
    let (count, m, n, c) = (num(1, "N")?, num(2, "m")?, num(3, "n")?, num(4, "c")?);
    if m == 0 || n == 0 || c == 0 {
        return Err(DsnError::data(path, "line 1: m, n and c must be positive"));
    }
    let mut instances = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for inst in 0..count {
        let short = || DsnError::data(path, format!("instance {inst}: file ends early (header declares {count} instances)"));
        let (li, label_line) = lines.next().ok_or_else(short)?;
        let label: usize = label_line
            .trim()
            .parse()
            .map_err(|_| DsnError::data(path, format!("line {}: instance {inst}: bad label {label_line:?}", li + 1)))?;
        if label >= c {
            return Err(DsnError::data(
                path,
                format!("line {}: instance {inst}: label {label} outside 0..{c}", li + 1),
            ));
        }
        let mut data = Vec::with_capacity(m * n);
        for var in 0..m {
            let (li, row) = lines.next().ok_or_else(short)?;
            let vals: Vec<&str> = row.split(',').map(str::trim).collect();
            if vals.len() != n {
                return Err(DsnError::data(
                    path,
                    format!("line {}: instance {inst} variate {var}: {} values, expected {n}", li + 1, vals.len()),
                ));
            }
            for v in vals {
                data.push(parse_value(v, path, li + 1, "value")? as f32);
            }
        }
        instances.push(Tensor::new(vec![m, n], data)?);
        labels.push(label);
    }
    if let Some((li, _)) = lines.next() {
        return Err(DsnError::data(
            path,
            format!("line {}: trailing data after {count} declared instances", li + 1),
        ));
    }
    let names = (0..c).map(|i| i.to_string()).collect();
    let mut ds = TsDataset::new(instances, labels, c, names, split)?;
    if count == 0 {
        ds.num_vars = m;
        ds.length = n;
    }
    Ok(ds)
}

/// Render TS3 text. Values use the shortest representation that parses
/// back to the same `f32`.
pub fn format_ts3(ds: &TsDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "TS3 {} {} {} {}", ds.len(), ds.num_vars, ds.length, ds.num_classes);
    for (t, y) in ds.instances.iter().zip(&ds.labels) {
        let _ = writeln!(out, "{y}");
        for var in 0..ds.num_vars {
            let row = &t.data()[var * ds.length..(var + 1) * ds.length];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
    }
    out
}

pub fn write_ts3(ds: &TsDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_ts3(ds)).map_err(|e| DsnError::io(path, e))
}

/// Load TS3 when the file starts with the `TS3` magic, UCR otherwise.
pub fn load_any(path: impl AsRef<Path>, split: Split) -> Result<TsDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
    if text.trim_start().starts_with("TS3") {
        parse_ts3(&text, path, split)
    } else {
        parse_ucr(&text, path, split)
    }
}

/// Per instance and variate: subtract the mean, divide by the population
/// standard deviation. Series with std below 1e-8 become all zeros.
pub fn z_normalize(ds: &TsDataset) -> TsDataset {
    let mut out = ds.clone();
    let n = ds.length;
    for t in &mut out.instances {
        for row in t.data_mut().chunks_mut(n.max(1)) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            for v in row.iter_mut() {
                *v = if std < 1e-8 { 0.0 } else { ((*v as f64 - mean) / std) as f32 };
            }
        }
    }
    out
}
