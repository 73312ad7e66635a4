//! The dynamic sparse network: stacked sparse CNN modules (sparse conv and
//! 1x1 conv, each followed by batch norm and ReLU), a final sparse conv
//! layer, two adaptive average pools and a 1x1 convolution classifier.

mod enrf;
mod layers;

pub use enrf::{enrf_size, layer_enrf_histogram, stacked_rf_set};
pub use layers::{BatchNorm, Conv1d, SparseConvLayer};

use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::ops::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, cross_entropy_batch, relu, relu_backward,
    BatchNormCache,
};
use crate::optim::Parameter;
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::topology::{init_topology, InitMode, KernelMask, SparsityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsnConfig {
    /// Sparse conv layers including the final one; `num_sparse_layers - 1`
    /// of them sit inside sparse CNN modules.
    pub num_sparse_layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub groups: usize,
    pub sparsity: f64,
    pub num_classes: usize,
    pub in_vars: usize,
    pub pool_mid_len: usize,
    /// Fully dense kernels, ignoring exploration regions.
    pub dense: bool,
    pub batch_norm: bool,
}

impl Default for DsnConfig {
    fn default() -> Self {
        Self {
            num_sparse_layers: 4,
            channels: 141,
            kernel_size: 39,
            groups: 3,
            sparsity: 0.8,
            num_classes: 2,
            in_vars: 1,
            pool_mid_len: 8,
            dense: false,
            batch_norm: true,
        }
    }
}

impl DsnConfig {
    pub fn sparsity_config(&self) -> SparsityConfig {
        SparsityConfig {
            sparsity: self.sparsity,
            groups: self.groups,
            kernel_size: self.kernel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sparse_layers < 2 {
            return Err(DsnError::Config(format!(
                "num_sparse_layers must be at least 2 (one module plus the final layer), got {}",
                self.num_sparse_layers
            )));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("num_classes", self.num_classes),
            ("in_vars", self.in_vars),
            ("pool_mid_len", self.pool_mid_len),
        ] {
            if v == 0 {
                return Err(DsnError::Config(format!("{name} must be positive")));
            }
        }
        self.sparsity_config().validate(self.channels)
    }
}

/// Sparse conv and 1x1 conv, each followed by optional batch norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCnnModule {
    pub sparse: SparseConvLayer,
    pub sparse_norm: Option<BatchNorm>,
    pub pointwise: Conv1d,
    pub pointwise_norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsnModel {
    pub cfg: DsnConfig,
    pub modules: Vec<SparseCnnModule>,
    pub final_sparse: SparseConvLayer,
    pub final_norm: Option<BatchNorm>,
    pub classifier: Conv1d,
}

struct BlockCache {
    input: Tensor,
    norm: Option<BatchNormCache>,
    /// Input to the ReLU.
    pre_act: Tensor,
}

/// Activations saved by [`DsnModel::forward_train`].
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    features: Tensor,
    mid: Tensor,
    len: usize,
}

impl ForwardCache {
    /// Smallest `|x|` over all ReLU inputs; finite-difference checks use it
    /// to avoid evaluating next to a kink.
    pub fn relu_margin(&self) -> f32 {
        self.blocks
            .iter()
            .flat_map(|b| b.pre_act.data())
            .fold(f32::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl DsnModel {
    pub fn build(cfg: DsnConfig, init_mode: InitMode, rng: &RngState) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let scfg = cfg.sparsity_config();
        let sparse = |layer: usize, c_in: usize| -> Result<SparseConvLayer> {
            let conv = Conv1d::new(c, c_in, cfg.kernel_size, &mut rng.stream(&format!("weights/sparse{layer}")));
            let mask = if cfg.dense {
                KernelMask::dense(c, c_in, cfg.kernel_size, cfg.groups)
            } else {
                init_topology(c, c_in, &scfg, init_mode, &mut rng.stream(&format!("mask/sparse{layer}")))?
            };
            SparseConvLayer::new(conv, mask, scfg)
        };
        let norm = || cfg.batch_norm.then(|| BatchNorm::new(c));
        let mut modules = Vec::with_capacity(cfg.num_sparse_layers - 1);
        for l in 0..cfg.num_sparse_layers - 1 {
            let c_in = if l == 0 { cfg.in_vars } else { c };
            modules.push(SparseCnnModule {
                sparse: sparse(l, c_in)?,
                sparse_norm: norm(),
                pointwise: Conv1d::new(c, c, 1, &mut rng.stream(&format!("weights/pointwise{l}"))),
                pointwise_norm: norm(),
            });
        }
        let final_sparse = sparse(cfg.num_sparse_layers - 1, c)?;
        let classifier = Conv1d::new(cfg.num_classes, c, 1, &mut rng.stream("weights/classifier"));
        Ok(Self {
            cfg,
            modules,
            final_sparse,
            final_norm: norm(),
            classifier,
        })
    }

    pub fn sparse_layers(&self) -> Vec<&SparseConvLayer> {
        self.modules
            .iter()
            .map(|m| &m.sparse)
            .chain(std::iter::once(&self.final_sparse))
            .collect()
    }

    pub fn sparse_layers_mut(&mut self) -> Vec<&mut SparseConvLayer> {
        self.modules
            .iter_mut()
            .map(|m| &mut m.sparse)
            .chain(std::iter::once(&mut self.final_sparse))
            .collect()
    }

    /// Every trainable parameter in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        fn conv<'a>(out: &mut Vec<&'a mut Parameter>, c: &'a mut Conv1d) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        fn norm<'a>(out: &mut Vec<&'a mut Parameter>, n: &'a mut Option<BatchNorm>) {
            if let Some(n) = n {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        for m in &mut self.modules {
            conv(&mut out, &mut m.sparse.conv);
            norm(&mut out, &mut m.sparse_norm);
            conv(&mut out, &mut m.pointwise);
            norm(&mut out, &mut m.pointwise_norm);
        }
        conv(&mut out, &mut self.final_sparse.conv);
        norm(&mut out, &mut self.final_norm);
        conv(&mut out, &mut self.classifier);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (b, m, n) = match x.shape() {
            [m, n] => (1, *m, *n),
            [b, m, n] => (*b, *m, *n),
            s => return Err(DsnError::Shape(format!("model input must be [m, n] or [B, m, n], got {s:?}"))),
        };
        if m != self.cfg.in_vars {
            return Err(DsnError::Shape(format!(
                "model expects {} variates, input has {m}",
                self.cfg.in_vars
            )));
        }
        if n < self.cfg.pool_mid_len {
            return Err(DsnError::Shape(format!(
                "series length {n} is shorter than the intermediate pool length {}",
                self.cfg.pool_mid_len
            )));
        }
        Ok((b, n))
    }

    fn head(&self, h: &Tensor, batch: usize) -> Result<(Tensor, Tensor, Tensor)> {
        let mid = adaptive_avg_pool1d(h, self.cfg.pool_mid_len)?;
        let features = adaptive_avg_pool1d(&mid, 1)?;
        let logits = self.classifier.forward(&features)?;
        let logits = logits.reshape(vec![batch, self.cfg.num_classes])?;
        Ok((mid, features, logits))
    }

    /// Inference on a batch `[B, m, n]`, returning logits `[B, classes]`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, n) = self.check_input(x)?;
        let mut h = x.clone().reshape(vec![batch, self.cfg.in_vars, n])?;
        let block = |h: &Tensor, conv: &Conv1d, norm: &Option<BatchNorm>| -> Result<Tensor> {
            let z = conv.forward(h)?;
            let z = match norm {
                Some(bn) => bn.forward_eval(&z)?,
                None => z,
            };
            Ok(relu(&z))
        };
        for m in &self.modules {
            h = block(&h, &m.sparse.conv, &m.sparse_norm)?;
            h = block(&h, &m.pointwise, &m.pointwise_norm)?;
        }
        h = block(&h, &self.final_sparse.conv, &self.final_norm)?;
        Ok(self.head(&h, batch)?.2)
    }

    /// Inference on one instance `[m, n]`, returning logits `[classes]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(2, "model input")?;
        let logits = self.forward_batch(x)?;
        logits.reshape(vec![self.cfg.num_classes])
    }

    /// Training-mode forward (batch statistics, running stats updated).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let (batch, n) = self.check_input(x)?;
        let mut h = x.clone().reshape(vec![batch, self.cfg.in_vars, n])?;
        let mut blocks = Vec::with_capacity(2 * self.modules.len() + 1);
        fn block(h: Tensor, conv: &Conv1d, norm: &mut Option<BatchNorm>, blocks: &mut Vec<BlockCache>) -> Result<Tensor> {
            let z = conv.forward(&h)?;
            let (pre_act, cache) = match norm {
                Some(bn) => {
                    let (y, c) = bn.forward_train(&z)?;
                    (y, Some(c))
                }
                None => (z, None),
            };
            let out = relu(&pre_act);
            blocks.push(BlockCache {
                input: h,
                norm: cache,
                pre_act,
            });
            Ok(out)
        }
        for m in &mut self.modules {
            h = block(h, &m.sparse.conv, &mut m.sparse_norm, &mut blocks)?;
            h = block(h, &m.pointwise, &mut m.pointwise_norm, &mut blocks)?;
        }
        h = block(h, &self.final_sparse.conv, &mut self.final_norm, &mut blocks)?;
        let (mid, features, logits) = self.head(&h, batch)?;
        Ok((
            logits,
            ForwardCache {
                blocks,
                features,
                mid,
                len: n,
            },
        ))
    }

    /// Backpropagate `grad_logits` `[B, classes]`, accumulating into every
    /// parameter's gradient. With `dense_sparse_grads`, also returns the
    /// gradient at every kernel position of each sparse layer (active or not).
    pub fn backward(
        &mut self,
        cache: ForwardCache,
        grad_logits: &Tensor,
        dense_sparse_grads: bool,
    ) -> Result<Option<Vec<Vec<f32>>>> {
        let batch = grad_logits.dim(0);
        let g = grad_logits.clone().reshape(vec![batch, self.cfg.num_classes, 1])?;
        let g = self.classifier.backward(&g, &cache.features, false)?.input;
        let g = adaptive_avg_pool1d_backward(&g, self.cfg.pool_mid_len)?;
        debug_assert_eq!(g.shape()[2], cache.mid.shape()[2]);
        let mut g = adaptive_avg_pool1d_backward(&g, cache.len)?;

        let mut blocks = cache.blocks;
        let mut dense = Vec::new();
        fn block(
            g: &Tensor,
            bc: BlockCache,
            conv: &mut Conv1d,
            norm: &mut Option<BatchNorm>,
            dense_grad: bool,
        ) -> Result<(Tensor, Vec<f32>)> {
            let g = relu_backward(g, &bc.pre_act)?;
            let g = match (norm, &bc.norm) {
                (Some(bn), Some(c)) => bn.backward(&g, c)?,
                _ => g,
            };
            let grads = conv.backward(&g, &bc.input, dense_grad)?;
            Ok((grads.input, if dense_grad { grads.weight } else { Vec::new() }))
        }
        let bc = blocks.pop().expect("final block");
        let (gi, dw) = block(&g, bc, &mut self.final_sparse.conv, &mut self.final_norm, dense_sparse_grads)?;
        g = gi;
        dense.push(dw);
        for m in self.modules.iter_mut().rev() {
            let bc = blocks.pop().expect("pointwise block");
            g = block(&g, bc, &mut m.pointwise, &mut m.pointwise_norm, false)?.0;
            let bc = blocks.pop().expect("sparse block");
            let (gi, dw) = block(&g, bc, &mut m.sparse.conv, &mut m.sparse_norm, dense_sparse_grads)?;
            g = gi;
            dense.push(dw);
        }
        dense.reverse();
        Ok(dense_sparse_grads.then_some(dense))
    }

    /// Mean cross-entropy of a training-mode pass; gradients are accumulated.
    pub fn loss_and_backward(&mut self, x: &Tensor, labels: &[usize], dense_sparse_grads: bool) -> Result<(f32, Tensor, Option<Vec<Vec<f32>>>)> {
        let (logits, cache) = self.forward_train(x)?;
        let (loss, grad) = cross_entropy_batch(&logits, labels)?;
        let dense = self.backward(cache, &grad, dense_sparse_grads)?;
        Ok((loss, logits, dense))
    }

    /// Total active weights over all sparse layers.
    pub fn sparse_active_count(&self) -> usize {
        self.sparse_layers().iter().map(|l| l.active_count()).sum()
    }
}
