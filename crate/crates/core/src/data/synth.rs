//! Synthetic multi-scale classification task.
//!
//! Each class owns a base frequency and a transient width. An instance is
//! the class sinusoid with a random phase, sampled on a smoothly warped time
//! axis, plus a Gaussian bump of the class width at a random position, a
//! random constant offset and white noise:
//!
//! ```text
//! tau(t) = t + warp * n / (2 pi) * sin(2 pi t / n + psi)
//! x(t)   = sin(2 pi f tau(t) / n + phi)
//!        + amp * exp(-((t - p) / (w / 2))^2)
//!        + o + noise
//! ```
//!
//! Classes differ both in long-range periodicity and in the scale of a
//! local event, so a classifier benefits from receptive fields of several
//! sizes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Split, TsDataset};
use crate::error::{DsnError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub length: usize,
    /// Cycles per series, one per class.
    pub freqs: Vec<f64>,
    /// Transient width in time steps, one per class.
    pub transient_widths: Vec<f64>,
    pub transient_amp: f64,
    pub noise: f64,
    /// Peak fractional speed-up of the warped time axis.
    pub warp: f64,
    /// Offsets are drawn uniformly from `[-offset, offset]`.
    pub offset: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::for_classes(3)
    }
}

impl SynthSpec {
    /// Default spec with `c` classes. The first three classes use
    /// frequencies 3, 5, 8 and widths 4, 10, 24; further classes extend both
    /// sequences.
    pub fn for_classes(c: usize) -> Self {
        let freqs = (0..c).map(|i| 3.0 + (i * (i + 3) / 2) as f64).collect();
        let transient_widths = (0..c)
            .map(|i| match i {
                0 => 4.0,
                1 => 10.0,
                _ => 24.0 + 8.0 * (i - 2) as f64,
            })
            .collect();
        Self {
            num_classes: c,
            train_per_class: 100,
            test_per_class: 100,
            length: 128,
            freqs,
            transient_widths,
            transient_amp: 2.0,
            noise: 0.3,
            warp: 0.1,
            offset: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DsnError::Config(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.freqs.len() != self.num_classes || self.transient_widths.len() != self.num_classes {
            return bad(format!(
                "{} classes need {0} frequencies and {0} transient widths, got {} and {}",
                self.num_classes,
                self.freqs.len(),
                self.transient_widths.len()
            ));
        }
        if self.length < 8 {
            return bad(format!("series length must be at least 8, got {}", self.length));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("instances per class must be positive".into());
        }
        for (name, list) in [("frequencies", &self.freqs), ("transient widths", &self.transient_widths)] {
            if list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("{name} must be positive and finite"));
            }
            for i in 0..list.len() {
                for j in i + 1..list.len() {
                    if list[i] == list[j] {
                        return bad(format!("{name} of classes {i} and {j} coincide ({})", list[i]));
                    }
                }
            }
        }
        if self.transient_widths.iter().any(|&w| w >= self.length as f64) {
            return bad("transient widths must be shorter than the series".into());
        }
        for (name, v) in [
            ("transient_amp", self.transient_amp),
            ("noise", self.noise),
            ("warp", self.warp),
            ("offset", self.offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.warp >= 1.0 {
            return bad(format!("warp must be below 1 to keep time monotone, got {}", self.warp));
        }
        Ok(())
    }

    fn instance<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<f32> {
        use std::f64::consts::TAU;
        let n = self.length as f64;
        let phi = rng.gen_range(0.0..TAU);
        let psi = rng.gen_range(0.0..TAU);
        let w = self.transient_widths[class];
        let half = w / 2.0;
        let p = rng.gen_range(half..=n - half);
        let o = if self.offset > 0.0 {
            rng.gen_range(-self.offset..=self.offset)
        } else {
            0.0
        };
        let noise = Normal::new(0.0, self.noise).expect("validated noise");
        (0..self.length)
            .map(|t| {
                let t = t as f64;
                let tau = t + self.warp * n / TAU * (TAU * t / n + psi).sin();
                let base = (TAU * self.freqs[class] * tau / n + phi).sin();
                let bump = self.transient_amp * (-((t - p) / half).powi(2)).exp();
                let eps = if self.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                (base + bump + o + eps) as f32
            })
            .collect()
    }

    fn split(&self, per_class: usize, split: Split) -> Result<TsDataset> {
        let label = match split {
            Split::Train => "synth/train",
            Split::Test => "synth/test",
        };
        let mut rng = RngState::new(self.seed).stream(label);
        let mut instances = Vec::with_capacity(per_class * self.num_classes);
        let mut labels = Vec::with_capacity(per_class * self.num_classes);
        for class in 0..self.num_classes {
            for _ in 0..per_class {
                let v = self.instance(class, &mut rng);
                instances.push(Tensor::new(vec![1, self.length], v)?);
                labels.push(class);
            }
        }
        let names = (0..self.num_classes).map(|c| c.to_string()).collect();
        TsDataset::new(instances, labels, self.num_classes, names, split)
    }
}

/// Draw the train and test splits. Both are deterministic in `spec.seed` and
/// come from independent random streams.
pub fn gen_synth(spec: &SynthSpec) -> Result<(TsDataset, TsDataset)> {
    spec.validate()?;
    Ok((
        spec.split(spec.train_per_class, Split::Train)?,
        spec.split(spec.test_per_class, Split::Test)?,
    ))
}
