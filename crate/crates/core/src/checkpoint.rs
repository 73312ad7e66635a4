//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "DSN1"  u32 version (1)
//! u32 num_sparse_layers  u32 channels  u32 kernel_size  u32 groups
//! f64 sparsity
//! u32 num_classes  u32 in_vars  u32 pool_mid_len
//! u8 dense  u8 batch_norm
//! u64 seed  u32 epoch  u32 input_len (0 = unknown)
//! per sparse layer: f32 weights [c_out][c_in][k], then the mask packed
//!                   LSB-first into ceil(c_out*c_in*k / 8) bytes
//! dense parameters in model order, skipping sparse weights, as f32
//! running mean and variance of every batch norm, as f32
//! u32 CRC-32 of all preceding bytes
//! ```
//!
//! Optimizer state is not stored; a loaded model is meant for inference,
//! analysis or fine-tuning from fresh moments.

use std::path::Path;

use crate::error::{DsnError, Result};
use crate::model::{BatchNorm, DsnConfig, DsnModel};
use crate::rng::RngState;
use crate::topology::{InitMode, KernelMask};

pub const MAGIC: &[u8; 4] = b"DSN1";
pub const VERSION: u32 = 1;

/// Run metadata stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u32,
    /// Series length the model was trained on, used for FLOP reports.
    pub input_len: u32,
}

fn bad(msg: impl Into<String>) -> DsnError {
    DsnError::Checkpoint(msg.into())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit in 32 bits")))
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn norms(model: &DsnModel) -> Vec<&BatchNorm> {
    let mut out = Vec::new();
    for m in &model.modules {
        out.extend(m.sparse_norm.iter());
        out.extend(m.pointwise_norm.iter());
    }
    out.extend(model.final_norm.iter());
    out
}

fn norms_mut(model: &mut DsnModel) -> Vec<&mut BatchNorm> {
    let mut out = Vec::new();
    for m in &mut model.modules {
        out.extend(m.sparse_norm.iter_mut());
        out.extend(m.pointwise_norm.iter_mut());
    }
    out.extend(model.final_norm.iter_mut());
    out
}

/// Parameter indices (in [`DsnModel::params_mut`] order) holding sparse weights.
fn sparse_weight_slots(cfg: &DsnConfig) -> Vec<usize> {
    let per_norm = if cfg.batch_norm { 2 } else { 0 };
    let per_module = 2 + per_norm + 2 + per_norm;
    let mut slots: Vec<usize> = (0..cfg.num_sparse_layers - 1).map(|l| l * per_module).collect();
    slots.push((cfg.num_sparse_layers - 1) * per_module);
    slots
}

pub fn to_bytes(model: &DsnModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let cfg = &model.cfg;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (cfg.num_sparse_layers, "num_sparse_layers"),
        (cfg.channels, "channels"),
        (cfg.kernel_size, "kernel_size"),
        (cfg.groups, "groups"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&cfg.sparsity.to_le_bytes());
    for (v, what) in [
        (cfg.num_classes, "num_classes"),
        (cfg.in_vars, "in_vars"),
        (cfg.pool_mid_len, "pool_mid_len"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.push(u8::from(cfg.dense));
    out.push(u8::from(cfg.batch_norm));
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    out.extend_from_slice(&meta.input_len.to_le_bytes());

    for layer in model.sparse_layers() {
        put_f32s(&mut out, layer.conv.weight.value.data());
        let bits = layer.mask().bits();
        let mut packed = vec![0u8; bits.len().div_ceil(8)];
        for (i, &on) in bits.iter().enumerate() {
            if on {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    let skip = sparse_weight_slots(cfg);
    let mut copy = model.clone();
    for (i, p) in copy.params_mut().into_iter().enumerate() {
        if !skip.contains(&i) {
            put_f32s(&mut out, p.value.data());
        }
    }
    for bn in norms(model) {
        put_f32s(&mut out, &bn.running_mean);
        put_f32s(&mut out, &bn.running_var);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(bad(format!("invalid flag byte {b} at {}", self.pos - 1))),
        }
    }

    fn f32s_into(&mut self, dst: &mut [f32]) -> Result<()> {
        let raw = self.take(dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(DsnModel, CheckpointMeta)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a DSN checkpoint (bad magic)"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version} (expected {VERSION})")));
    }
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch, file is corrupt"));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let num_sparse_layers = r.usize()?;
    let channels = r.usize()?;
    let kernel_size = r.usize()?;
    let groups = r.usize()?;
    let sparsity = r.f64()?;
    let cfg = DsnConfig {
        num_sparse_layers,
        channels,
        kernel_size,
        groups,
        sparsity,
        num_classes: r.usize()?,
        in_vars: r.usize()?,
        pool_mid_len: r.usize()?,
        dense: r.bool()?,
        batch_norm: r.bool()?,
    };
    let meta = CheckpointMeta {
        seed: r.u64()?,
        epoch: r.u32()?,
        input_len: r.u32()?,
    };
    cfg.validate().map_err(|e| bad(format!("stored configuration is invalid: {e}")))?;
    let mut model = DsnModel::build(cfg, InitMode::Sequential, &RngState::new(meta.seed))?;

    for layer in model.sparse_layers_mut() {
        r.f32s_into(layer.conv.weight.value.data_mut())?;
        let m = layer.mask();
        let (c_out, c_in, k) = (m.c_out(), m.c_in(), m.kernel_size());
        let widths = m.region_widths().to_vec();
        let n = c_out * c_in * k;
        let packed = r.take(n.div_ceil(8))?;
        let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let mask = KernelMask::from_parts(c_out, c_in, k, widths, bits)
            .map_err(|e| bad(format!("stored mask is invalid: {e}")))?;
        layer.set_mask(mask);
    }
    let skip = sparse_weight_slots(&cfg);
    for (i, p) in model.params_mut().into_iter().enumerate() {
        if !skip.contains(&i) {
            r.f32s_into(p.value.data_mut())?;
        }
    }
    for bn in norms_mut(&mut model) {
        r.f32s_into(&mut bn.running_mean)?;
        r.f32s_into(&mut bn.running_var)?;
    }
    if r.pos != body.len() {
        return Err(bad(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &DsnModel, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model, meta)?).map_err(|e| DsnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(DsnModel, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DsnError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        DsnError::Checkpoint(m) => DsnError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
