//! Dynamic sparse networks for time-series classification.
//!
//! The crate trains 1D convolutional classifiers whose large kernels are kept
//! sparse by binary masks. Output channels are split into groups, each
//! confined to a prefix of the kernel, and the active positions are evolved
//! during training by magnitude pruning and random (or gradient-guided)
//! regrowth. Around that core sit resource accounting (parameters, FLOPs,
//! receptive-field histograms), dataset loaders, a deterministic trainer with
//! checkpointing, and the `dsn` command-line tool.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod topology;

pub use error::{DsnError, Result};
pub use model::{DsnConfig, DsnModel};
pub use optim::{OptimConfig, Parameter};
pub use rng::RngState;
pub use tensor::Tensor;
