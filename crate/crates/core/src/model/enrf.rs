//! Effective neighbour receptive field (eNRF) of sparse kernels.
//!
//! The eNRF of a kernel is the span from its first to its last active
//! position, or 0 for an empty kernel. Stacking layers composes spans: a
//! chain of kernels with spans `s_1..s_m` sees `s_1 + ... + s_m - (m - 1)`
//! input steps.

use std::collections::{BTreeMap, BTreeSet};

use crate::topology::KernelMask;

pub fn enrf_size(kernel_row: &[bool]) -> usize {
    let first = kernel_row.iter().position(|&b| b);
    let last = kernel_row.iter().rposition(|&b| b);
    match (first, last) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    }
}

/// Count of kernels per eNRF size (only sizes that occur).
pub fn layer_enrf_histogram(mask: &KernelMask) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for j in 0..mask.c_out() {
        for i in 0..mask.c_in() {
            *hist.entry(enrf_size(mask.kernel_row(j, i))).or_insert(0) += 1;
        }
    }
    hist
}

/// Receptive-field sizes reachable by stacking layers whose eNRF sizes are
/// drawn from `sets`: `{ max(0, s_1 + ... + s_m - (m - 1)) }`.
pub fn stacked_rf_set(sets: &[BTreeSet<usize>]) -> BTreeSet<usize> {
    if sets.is_empty() {
        return BTreeSet::new();
    }
    let mut sums: BTreeSet<usize> = BTreeSet::from([0]);
    for set in sets {
        sums = sums
            .iter()
            .flat_map(|&a| set.iter().map(move |&s| a + s))
            .collect();
    }
    let overlap = sets.len() - 1;
    sums.into_iter().map(|s| s.saturating_sub(overlap)).collect()
}
