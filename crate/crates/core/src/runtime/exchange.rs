//! Strided slice exchange between device memories.
//!
//! After a distributed kernel execution each owner sends its assigned
//! slice of every non-duplicated array to all other devices.  A slice
//! along dimension `d` of a row-major array transfers as one
//! two-dimensional strided copy per combination of the dimensions left
//! of `d-1`: the copy's rows span the immediately-left dimension, and
//! each contiguous run covers the owned range times everything right
//! of `d`.  Links carry their transfers concurrently, so exchange time
//! is the heaviest link's bytes over its bandwidth plus a
//! synchronization at each end.

use crate::config::SimConfig;
use crate::filter::SplitPlan;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transfer {
    pub array: String,
    pub from: usize,
    pub to: usize,
    pub bytes: u64,
    /// Number of 2D strided copies covering the slice.
    pub segments: u64,
    /// Strided rows in each copy.
    pub rows_per_segment: u64,
    /// Contiguous bytes per row.
    pub run_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExchangePlan {
    pub transfers: Vec<Transfer>,
    pub comm_time: f64,
    pub total_bytes: u64,
    pub max_link_bytes: u64,
}

/// Per-owner slice geometry along the selected dimension.
fn slice_geometry(extents: &[usize], dim: usize, rows: u64, elem: u64) -> (u64, u64, u64) {
    let right: u64 = extents[dim + 1..].iter().map(|e| *e as u64).product();
    let segments: u64 = if dim == 0 {
        1
    } else {
        extents[..dim - 1].iter().map(|e| *e as u64).product()
    };
    let rows_per_segment: u64 = if dim == 0 { 1 } else { extents[dim - 1] as u64 };
    let run_bytes = rows * right * elem;
    (segments, rows_per_segment, run_bytes)
}

pub fn plan_exchange(plan: &SplitPlan, cfg: &SimConfig) -> ExchangePlan {
    let n = plan.devices;
    let mut transfers = Vec::new();
    for (name, entry) in &plan.arrays {
        if entry.duplicated {
            continue;
        }
        for owner in 0..n {
            let (lb, ub) = entry.ranges[owner];
            if lb > ub {
                continue;
            }
            let rows = (ub - lb + 1) as u64;
            let (segments, rows_per_segment, run_bytes) =
                slice_geometry(&entry.extents, entry.dim, rows, entry.elem_bytes);
            let bytes = segments * rows_per_segment * run_bytes;
            for dest in 0..n {
                if dest == owner {
                    continue;
                }
                transfers.push(Transfer {
                    array: name.clone(),
                    from: owner,
                    to: dest,
                    bytes,
                    segments,
                    rows_per_segment,
                    run_bytes,
                });
            }
        }
    }
    let mut link_bytes: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for t in &transfers {
        *link_bytes.entry((t.from, t.to)).or_insert(0) += t.bytes;
    }
    let comm_time = if transfers.is_empty() {
        0.0
    } else {
        let slowest = link_bytes
            .iter()
            .map(|((from, to), bytes)| *bytes as f64 / cfg.link_bandwidth(*from, *to))
            .fold(0.0_f64, f64::max);
        slowest + 2.0 * cfg.sync_overhead_s
    };
    ExchangePlan {
        total_bytes: transfers.iter().map(|t| t.bytes).sum(),
        max_link_bytes: link_bytes.values().copied().max().unwrap_or(0),
        transfers,
        comm_time,
    }
}
