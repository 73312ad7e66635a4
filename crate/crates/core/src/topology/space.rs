//! Exact sizes of the mask search spaces reachable under layer-wise, grouped,
//! and grouped-with-regions exploration.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::One;

use crate::error::{DsnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// One budget of `N_l(1-S)` positions anywhere in the layer.
    Layerwise,
    /// `N` equal groups, each with budget `N_l(1-S)/N`.
    Grouped,
    /// Grouped, with group `i` confined to `i*N_l/N^2` positions.
    GroupedRegions,
}

impl SpaceKind {
    pub const ALL: [SpaceKind; 3] = [SpaceKind::Layerwise, SpaceKind::Grouped, SpaceKind::GroupedRegions];
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::Layerwise => "layerwise",
            SpaceKind::Grouped => "grouped",
            SpaceKind::GroupedRegions => "grouped_regions",
        })
    }
}

impl FromStr for SpaceKind {
    type Err = DsnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(SpaceKind::Layerwise),
            "grouped" => Ok(SpaceKind::Grouped),
            "grouped_regions" | "grouped-regions" => Ok(SpaceKind::GroupedRegions),
            other => Err(DsnError::Config(format!("unknown space kind '{other}'"))),
        }
    }
}

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::default();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // exact: acc * (n - i) is divisible by (i + 1) at every step
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn active_total(n_l: u64, sparsity: f64) -> Result<u64> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(DsnError::Config(format!("sparsity must lie in [0, 1), got {sparsity}")));
    }
    let x = n_l as f64 * (1.0 - sparsity);
    let r = x.round();
    if (x - r).abs() > 1e-9 {
        return Err(DsnError::Divisibility(format!(
            "N_l(1-S) = {n_l} * (1 - {sparsity}) = {x} is not an integer"
        )));
    }
    Ok(r as u64)
}

fn divide(num: u64, den: u64, what: &str) -> Result<u64> {
    if den == 0 || num % den != 0 {
        return Err(DsnError::Divisibility(format!(
            "{what} = {num}/{den} is not an integer"
        )));
    }
    Ok(num / den)
}

pub fn exploration_space_size(kind: SpaceKind, n_l: u64, sparsity: f64, groups: u64) -> Result<BigUint> {
    let active = active_total(n_l, sparsity)?;
    match kind {
        SpaceKind::Layerwise => Ok(binomial(n_l, active)),
        SpaceKind::Grouped => {
            let size = divide(n_l, groups, "N_l/N")?;
            let per = divide(active, groups, "N_l(1-S)/N")?;
            Ok(binomial(size, per).pow(groups as u32))
        }
        SpaceKind::GroupedRegions => {
            let per = divide(active, groups, "N_l(1-S)/N")?;
            let mut acc = BigUint::one();
            for i in 1..=groups {
                let region = divide(i * n_l, groups * groups, "i*N_l/N^2")?;
                acc *= binomial(region, per);
            }
            Ok(acc)
        }
    }
}
