//! The user guide in `book/`, compiled so that every Rust snippet in it runs
//! as a doc-test. Each chapter becomes an empty module documented by the
//! chapter text.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/sparse_convolution.md")]
pub mod sparse_convolution {}

#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}

#[doc = include_str!("../../../book/src/dynamic_updates.md")]
pub mod dynamic_updates {}

#[doc = include_str!("../../../book/src/exploration_space.md")]
pub mod exploration_space {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
