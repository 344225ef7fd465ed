use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};

/// Midranks of `xs` mapped linearly onto `[0, 1]` via `(rank - 1) / (n - 1)`.
pub fn percentile_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group i..=j
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let scaled = (midrank - 1.0) / (n - 1) as f64;
        for &k in &order[i..=j] {
            out[k] = scaled;
        }
        i = j + 1;
    }
    out
}

/// Replaces every column by its within-quarter cross-sectional percentile ranks.
pub fn percentile_rank_transform(raw: &Panel) -> Result<Panel> {
    let n = raw.n_actors();
    if n < 2 {
        return Err(Error::Precondition("percentile ranks need at least 2 actors".into()));
    }
    let mut values = DMatrix::zeros(n, raw.n_quarters());
    for (j, col) in raw.values().column_iter().enumerate() {
        let ranks = percentile_ranks(col.as_slice());
        values.column_mut(j).copy_from_slice(&ranks);
    }
    raw.replace_values(values, raw.quarters().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinMaxMode {
    FullSample,
    /// Bounds at quarter t use quarters up to and including t.
    Recursive,
}

fn minmax_row(row: &[f64], mode: MinMaxMode, label: &str) -> Result<Vec<f64>> {
    match mode {
        MinMaxMode::FullSample => {
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Err(Error::ZeroRange(format!("series '{label}' is constant")));
            }
            Ok(row.iter().map(|v| (v - lo) / (hi - lo)).collect())
        }
        MinMaxMode::Recursive => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            Ok(row
                .iter()
                .map(|&v| {
                    lo = lo.min(v);
                    hi = hi.max(v);
                    if hi > lo {
                        (v - lo) / (hi - lo)
                    } else {
                        0.5
                    }
                })
                .collect())
        }
    }
}

/// Min-max scales every actor's series.
pub fn minmax_normalize(series: &Panel, mode: MinMaxMode) -> Result<Panel> {
    let all: Vec<usize> = (0..series.n_actors()).collect();
    minmax_rows(series, &all, mode)
}

/// Min-max scales only the listed actors; the rest pass through unchanged.
pub fn minmax_normalize_actors(series: &Panel, actor_ids: &[&str], mode: MinMaxMode) -> Result<Panel> {
    let rows = actor_ids
        .iter()
        .map(|id| {
            series
                .actor_index(id)
                .ok_or_else(|| Error::RegistryConflict(format!("unknown actor '{id}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    minmax_rows(series, &rows, mode)
}

fn minmax_rows(series: &Panel, rows: &[usize], mode: MinMaxMode) -> Result<Panel> {
    let mut values = series.values().clone();
    for &i in rows {
        let row: Vec<f64> = values.row(i).iter().copied().collect();
        let scaled = minmax_row(&row, mode, &series.registry()[i].actor_id)?;
        for (j, v) in scaled.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    series.replace_values(values, series.quarters().to_vec())
}

/// Shifts the selected actors right by `lag` quarters and truncates the
/// panel to the common support, which starts `lag` quarters later.
pub fn lag_actors(panel: &Panel, actor_ids: &[&str], lag: usize) -> Result<Panel> {
    if lag == 0 {
        return Err(Error::Precondition("lag must be at least one quarter".into()));
    }
    let t = panel.n_quarters();
    if lag >= t {
        return Err(Error::EmptySupport(format!("lag {lag} leaves no quarters out of {t}")));
    }
    let mut lagged = HashSet::new();
    for id in actor_ids {
        let i = panel
            .actor_index(id)
            .ok_or_else(|| Error::RegistryConflict(format!("unknown actor '{id}'")))?;
        lagged.insert(i);
    }
    let width = t - lag;
    let src = panel.values();
    let values = DMatrix::from_fn(panel.n_actors(), width, |i, j| {
        if lagged.contains(&i) {
            src[(i, j)]
        } else {
            src[(i, j + lag)]
        }
    });
    panel.replace_values(values, panel.quarters()[lag..].to_vec())
}

/// Quarter-on-quarter differences; the first quarter is dropped.
pub fn first_difference(panel: &Panel) -> Result<Panel> {
    let t = panel.n_quarters();
    if t < 2 {
        return Err(Error::EmptySupport("first difference needs at least 2 quarters".into()));
    }
    let src = panel.values();
    let values = DMatrix::from_fn(panel.n_actors(), t - 1, |i, j| src[(i, j + 1)] - src[(i, j)]);
    panel.replace_values(values, panel.quarters()[1..].to_vec())
}
