//! Kernel masks restricted to per-group exploration regions, and the
//! prune/regrow topology update that evolves them during training.
//!
//! Output channels of a layer are split into `N` contiguous groups. Kernels in
//! group `i` (1-based) may only activate their first `round(i*k/N)` positions,
//! so low groups are forced onto short receptive fields while the last group
//! spans the whole kernel. Each update prunes the smallest-magnitude active
//! weights of a group and regrows the same number inside the group's region,
//! so the number of active weights per group never changes.

mod space;

pub use space::{binomial, exploration_space_size, SpaceKind};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::optim::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    /// Fraction of kernel weights forced to zero, in `[0, 1)`.
    pub sparsity: f64,
    pub groups: usize,
    pub kernel_size: usize,
}

impl SparsityConfig {
    pub fn validate(&self, c_out: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(DsnError::Config(format!(
                "sparsity must lie in [0, 1), got {}",
                self.sparsity
            )));
        }
        if self.groups == 0 {
            return Err(DsnError::Config("number of groups must be positive".into()));
        }
        if self.kernel_size < self.groups {
            return Err(DsnError::Config(format!(
                "kernel size {} must be at least the number of groups {}",
                self.kernel_size, self.groups
            )));
        }
        if c_out % self.groups != 0 {
            return Err(DsnError::Config(format!(
                "{c_out} output channels are not divisible into {} groups",
                self.groups
            )));
        }
        Ok(())
    }

    /// Active positions per kernel of group `group` (1-based) at initialization.
    pub fn kernel_budget(&self, group: usize) -> usize {
        round_half_up(region_width(group, self.kernel_size, self.groups) as f64 * (1.0 - self.sparsity))
    }
}

pub(crate) fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs representation error such as 5 * 0.3 = 1.4999999
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Width of the exploration region of group `group` (1-based): `round(group*k/n)`.
pub fn region_width(group: usize, kernel_size: usize, groups: usize) -> usize {
    debug_assert!(group >= 1 && group <= groups);
    (2 * group * kernel_size + groups) / (2 * groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Sequential,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowMode {
    Random,
    Gradient,
}

/// Whether `delta_t` and the decay horizon count epochs or optimizer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateUnit {
    Epoch,
    Iteration,
}

macro_rules! parse_enum {
    ($ty:ident, $($text:literal => $variant:ident),+) => {
        impl FromStr for $ty {
            type Err = DsnError;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(DsnError::Config(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = match self { $($ty::$variant => $text,)+ };
                f.write_str(text)
            }
        }
    };
}

parse_enum!(InitMode, "sequential" => Sequential, "random" => Random);
parse_enum!(GrowMode, "random" => Random, "gradient" => Gradient);
parse_enum!(UpdateUnit, "epoch" => Epoch, "iteration" => Iteration);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    /// Update period, in `unit`s.
    pub delta_t: usize,
    /// Fraction of a group's active weights replaced by the first update.
    pub alpha: f64,
    /// Decay horizon, in `unit`s.
    pub total: usize,
    pub grow_mode: GrowMode,
    /// `false` freezes the initial topology.
    pub dynamic: bool,
    pub unit: UpdateUnit,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self {
            delta_t: 5,
            alpha: 0.5,
            total: 1000,
            grow_mode: GrowMode::Random,
            dynamic: true,
            unit: UpdateUnit::Epoch,
        }
    }
}

impl UpdateSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.delta_t == 0 {
            return Err(DsnError::Config("update period must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DsnError::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn is_update_point(&self, t: usize) -> bool {
        self.dynamic && t > 0 && t % self.delta_t == 0
    }

    pub fn decay(&self, t: usize) -> f64 {
        decay_fraction(t, self.alpha, self.total)
    }
}

/// Cosine-annealed fraction of active weights to replace at time `t`.
pub fn decay_fraction(t: usize, alpha: f64, total: usize) -> f64 {
    let total = total.max(1);
    let t = t.min(total) as f64;
    alpha / 2.0 * (1.0 + (t * std::f64::consts::PI / total as f64).cos())
}

/// `round(region_capacity * decay * (1 - sparsity))`.
pub fn update_count(region_capacity: usize, decay: f64, sparsity: f64) -> usize {
    round_half_up(region_capacity as f64 * decay * (1.0 - sparsity))
}

/// Binary activity mask of one convolution, laid out `[c_out][c_in][k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMask {
    c_out: usize,
    c_in: usize,
    k: usize,
    region_widths: Vec<usize>,
    bits: Vec<bool>,
}

impl KernelMask {
    /// All-clear mask with grouped exploration regions.
    pub fn empty(c_out: usize, c_in: usize, cfg: &SparsityConfig) -> Result<Self> {
        cfg.validate(c_out)?;
        let widths = (1..=cfg.groups)
            .map(|g| region_width(g, cfg.kernel_size, cfg.groups))
            .collect();
        Ok(Self {
            c_out,
            c_in,
            k: cfg.kernel_size,
            region_widths: widths,
            bits: vec![false; c_out * c_in * cfg.kernel_size],
        })
    }

    /// Fully active mask whose regions all span the whole kernel.
    pub fn dense(c_out: usize, c_in: usize, k: usize, groups: usize) -> Self {
        Self {
            c_out,
            c_in,
            k,
            region_widths: vec![k; groups],
            bits: vec![true; c_out * c_in * k],
        }
    }

    /// Rebuild from raw parts, checking that no bit lies outside its region.
    pub fn from_parts(
        c_out: usize,
        c_in: usize,
        k: usize,
        region_widths: Vec<usize>,
        bits: Vec<bool>,
    ) -> Result<Self> {
        let groups = region_widths.len();
        if groups == 0 || c_out % groups != 0 || bits.len() != c_out * c_in * k {
            return Err(DsnError::Shape("inconsistent mask dimensions".into()));
        }
        let mask = Self {
            c_out,
            c_in,
            k,
            region_widths,
            bits,
        };
        if !mask.is_contained() {
            return Err(DsnError::Shape("mask bit outside its exploration region".into()));
        }
        Ok(mask)
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> usize {
        self.region_widths.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn region_widths(&self) -> &[usize] {
        &self.region_widths
    }

    /// Region width of 0-based group `g`.
    pub fn region_width_of(&self, g: usize) -> usize {
        self.region_widths[g]
    }

    pub fn channels_per_group(&self) -> usize {
        self.c_out / self.groups()
    }

    /// 0-based group of output channel `j`.
    pub fn group_of(&self, j: usize) -> usize {
        j / self.channels_per_group()
    }

    pub fn group_channels(&self, g: usize) -> Range<usize> {
        let per = self.channels_per_group();
        g * per..(g + 1) * per
    }

    pub fn flat_index(&self, j: usize, i: usize, p: usize) -> usize {
        (j * self.c_in + i) * self.k + p
    }

    pub fn kernel_row(&self, j: usize, i: usize) -> &[bool] {
        let start = self.flat_index(j, i, 0);
        &self.bits[start..start + self.k]
    }

    pub fn is_set(&self, flat: usize) -> bool {
        self.bits[flat]
    }

    pub fn set(&mut self, flat: usize, on: bool) {
        self.bits[flat] = on;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn group_popcount(&self, g: usize) -> usize {
        self.group_positions(g).filter(|&f| self.bits[f]).count()
    }

    /// Number of positions in group `g`'s exploration region.
    pub fn region_capacity(&self, g: usize) -> usize {
        self.c_in * self.channels_per_group() * self.region_widths[g]
    }

    /// Flat indices of every position inside group `g`'s region, ascending.
    pub fn group_positions(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let width = self.region_widths[g];
        let (c_in, k) = (self.c_in, self.k);
        self.group_channels(g).flat_map(move |j| {
            (0..c_in).flat_map(move |i| (0..width).map(move |p| (j * c_in + i) * k + p))
        })
    }

    /// True when every set bit lies inside its group's region.
    pub fn is_contained(&self) -> bool {
        (0..self.c_out).all(|j| {
            let width = self.region_widths[self.group_of(j)];
            (0..self.c_in).all(|i| self.kernel_row(j, i)[width..].iter().all(|&b| !b))
        })
    }

    /// Swap output channels `a` and `b` (used for symmetry checks).
    pub fn swap_output_channels(&mut self, a: usize, b: usize) {
        let row = self.c_in * self.k;
        for x in 0..row {
            self.bits.swap(a * row + x, b * row + x);
        }
    }
}

/// Activate `round(region_width*(1-S))` positions per kernel, either the first
/// ones (`Sequential`) or drawn uniformly inside the region (`Random`).
pub fn init_topology<R: Rng>(
    c_out: usize,
    c_in: usize,
    cfg: &SparsityConfig,
    mode: InitMode,
    rng: &mut R,
) -> Result<KernelMask> {
    let mut mask = KernelMask::empty(c_out, c_in, cfg)?;
    for g in 0..cfg.groups {
        let width = mask.region_widths[g];
        let budget = cfg.kernel_budget(g + 1).min(width);
        for j in mask.group_channels(g) {
            for i in 0..c_in {
                let base = mask.flat_index(j, i, 0);
                match mode {
                    InitMode::Sequential => {
                        for p in 0..budget {
                            mask.bits[base + p] = true;
                        }
                    }
                    InitMode::Random => {
                        for p in index::sample(rng, width, budget) {
                            mask.bits[base + p] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// The `u` entries with the smallest `|weight|`, ties broken by flat index.
pub fn prune_indices(active: &[(usize, f32)], u: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f32)> = active.to_vec();
    let by_magnitude = |a: &(usize, f32), b: &(usize, f32)| {
        a.1.abs().total_cmp(&b.1.abs()).then(a.0.cmp(&b.0))
    };
    let u = u.min(order.len());
    if u == 0 {
        return Vec::new();
    }
    if u < order.len() {
        order.select_nth_unstable_by(u - 1, by_magnitude);
        order.truncate(u);
    }
    order.sort_unstable_by(by_magnitude);
    order.into_iter().map(|(idx, _)| idx).collect()
}

/// How regrown positions are chosen.
pub enum GrowSource<'a, R: Rng> {
    Random(&'a mut R),
    /// Dense weight gradient indexed by flat position.
    Gradient(&'a [f32]),
}

/// Pick `u` of the `candidates` (inactive positions, ascending). Returns the
/// chosen positions and the shortfall when fewer than `u` candidates exist.
pub fn grow_indices<R: Rng>(
    candidates: &[usize],
    u: usize,
    source: GrowSource<'_, R>,
) -> (Vec<usize>, usize) {
    let take = u.min(candidates.len());
    let shortfall = u - take;
    let mut chosen: Vec<usize> = match source {
        GrowSource::Random(rng) => index::sample(rng, candidates.len(), take)
            .into_iter()
            .map(|c| candidates[c])
            .collect(),
        GrowSource::Gradient(grad) => {
            let mut scored: Vec<(usize, f32)> = candidates.iter().map(|&c| (c, grad[c])).collect();
            scored.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            scored.into_iter().take(take).map(|(c, _)| c).collect()
        }
    };
    chosen.sort_unstable();
    (chosen, shortfall)
}

/// What one group did during a topology update.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupUpdate {
    /// Count given by the decay schedule before clamping.
    pub requested: usize,
    pub pruned: Vec<usize>,
    pub grown: Vec<usize>,
    /// Requested replacements that had no free region position to grow into.
    pub shortfall: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub groups: Vec<GroupUpdate>,
}

impl UpdateReport {
    pub fn changed(&self) -> usize {
        self.groups.iter().map(|g| g.grown.len()).sum()
    }
}

/// Prune and regrow every group of one layer at time `t`.
///
/// The replacement count is clamped to both the active count and the number
/// of free region positions, so per-group popcounts are conserved exactly.
/// Pruned weights are zeroed, grown weights start at zero, and Adam moments
/// at all touched positions are reset. `dense_grad` is required for
/// [`GrowMode::Gradient`].
pub fn topology_update_step<R: Rng>(
    mask: &mut KernelMask,
    weights: &mut Parameter,
    sparsity: f64,
    t: usize,
    schedule: &UpdateSchedule,
    rng: &mut R,
    dense_grad: Option<&[f32]>,
) -> Result<UpdateReport> {
    if weights.len() != mask.bits.len() {
        return Err(DsnError::Shape(format!(
            "mask has {} positions, weights {}",
            mask.bits.len(),
            weights.len()
        )));
    }
    if schedule.grow_mode == GrowMode::Gradient && dense_grad.map(|g| g.len()) != Some(mask.bits.len()) {
        return Err(DsnError::Shape(
            "gradient growth needs a dense gradient for every kernel position".into(),
        ));
    }
    let decay = schedule.decay(t);
    let mut report = UpdateReport::default();
    for g in 0..mask.groups() {
        let positions: Vec<usize> = mask.group_positions(g).collect();
        let mut active = Vec::new();
        let mut inactive = Vec::new();
        for &f in &positions {
            if mask.bits[f] {
                active.push((f, weights.value.data()[f]));
            } else {
                inactive.push(f);
            }
        }
        let requested = update_count(mask.region_capacity(g), decay, sparsity);
        let u = requested.min(active.len()).min(inactive.len());
        let pruned = prune_indices(&active, u);
        let source = match schedule.grow_mode {
            GrowMode::Random => GrowSource::Random(&mut *rng),
            GrowMode::Gradient => GrowSource::Gradient(dense_grad.expect("checked above")),
        };
        let (grown, _) = grow_indices(&inactive, u, source);
        for &f in &pruned {
            mask.bits[f] = false;
            weights.value.data_mut()[f] = 0.0;
            weights.reset_moments_at(f);
        }
        for &f in &grown {
            mask.bits[f] = true;
            weights.value.data_mut()[f] = 0.0;
            weights.reset_moments_at(f);
        }
        report.groups.push(GroupUpdate {
            requested,
            pruned,
            grown,
            shortfall: requested - u,
        });
    }
    Ok(report)
}
