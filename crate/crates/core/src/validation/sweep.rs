use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::harness::{DeltaHarness, DeltaSummary};
use crate::error::Result;
use crate::evaluation::R2Convention;
use crate::exec::Execution;
use crate::mixture::ArchitectureSpec;
use crate::panel::{BlockPartition, Panel, RollingWindowSpec};

/// Training lengths (years) × local ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub test_years: Vec<i32>,
    pub train_years: Vec<usize>,
    pub local_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub train_years: usize,
    pub local_k: usize,
    /// `None` with `error` set when the cell cannot be evaluated.
    pub summary: Option<DeltaSummary>,
    pub error: Option<String>,
}

/// One Δ cell per `(T, K_b)`; infeasible cells are recorded, not fatal.
/// The local rank overrides the size rule for every local block. A rank
/// larger than the smallest local block is infeasible rather than capped.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    panel: &Panel,
    partition: &BlockPartition,
    spec: &ArchitectureSpec,
    baseline: &ArchitectureSpec,
    grid: &SweepGrid,
    convention: R2Convention,
    exec: Execution,
) -> Result<Vec<SweepCell>> {
    let blocks = partition.resolve(panel)?;
    let smallest = blocks.iter().filter(|b| b.local).map(|b| b.rows.len()).min();
    let mut cells = Vec::with_capacity(grid.train_years.len() * grid.local_ranks.len());
    for &t in &grid.train_years {
        let cal = RollingWindowSpec::new(grid.test_years.clone(), t);
        let harness = DeltaHarness::new(panel, &cal, spec, baseline, convention, exec);
        for &k in &grid.local_ranks {
            let cell_spec = ArchitectureSpec { local_k: Some(k), ..spec.clone() };
            let too_big = smallest.filter(|&m| k > m).map(|m| format!("K_b={k} exceeds the smallest local block ({m} actors)"));
            // Only the local rank changes, so the cached global fits still apply.
            let outcome = harness
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|h| too_big.map_or(Ok(h), Err))
                .and_then(|h| h.deltas_with(&cell_spec, &blocks, exec).map_err(|e| e.to_string()));
            let (summary, error) = match outcome {
                Ok(s) => (Some(s), None),
                Err(e) => {
                    log::warn!("sweep cell T={t}, K_b={k}: {e}");
                    (None, Some(e))
                }
            };
            cells.push(SweepCell { train_years: t, local_k: k, summary, error });
        }
    }
    Ok(cells)
}

/// Rows are training lengths, columns local ranks; each cell is `Δ (W/n)`.
pub fn sweep_markdown(cells: &[SweepCell]) -> String {
    let mut ts: Vec<usize> = cells.iter().map(|c| c.train_years).collect();
    ts.dedup();
    let mut ks: Vec<usize> = cells.iter().map(|c| c.local_k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut s = String::from("| T (years) |");
    for k in &ks {
        let _ = write!(s, " K_b={k} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(ks.len()));
    s.push('\n');
    for t in &ts {
        let _ = write!(s, "| {t} |");
        for k in &ks {
            let cell = cells.iter().find(|c| c.train_years == *t && c.local_k == *k);
            match cell.and_then(|c| c.summary.as_ref()) {
                Some(sum) => {
                    let _ = write!(s, " {:+.4} ({}/{}) |", sum.delta, sum.wins, sum.windows());
                }
                None => s.push_str(" infeasible |"),
            }
        }
        s.push('\n');
    }
    s
}
