use serde::{Deserialize, Serialize};

use super::rolling::WindowResult;
use crate::error::{Error, Result};
use crate::panel::percentile_ranks;

/// Reference mean in the R² denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Convention {
    /// Per-actor mean of the four test quarters.
    #[default]
    TestMean,
    /// Per-actor mean of the year's first training span.
    TrainMean,
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ_ref)²` over actors and the four quarters.
pub fn oos_r2(w: &WindowResult, convention: R2Convention) -> Result<f64> {
    let reference = match convention {
        R2Convention::TestMean => &w.per_actor_test_means,
        R2Convention::TrainMean => &w.train_means,
    };
    let (mut sse, mut sst) = (0.0, 0.0);
    for i in 0..w.actuals.nrows() {
        for q in 0..w.actuals.ncols() {
            let y = w.actuals[(i, q)];
            sse += (y - w.forecasts[(i, q)]).powi(2);
            sst += (y - reference[i]).powi(2);
        }
    }
    if sst <= 0.0 {
        return Err(Error::DegenerateWindow(format!("test year {}: zero R² denominator", w.test_year)));
    }
    Ok(1.0 - sse / sst)
}

pub fn window_r2s(results: &[WindowResult], convention: R2Convention) -> Result<Vec<f64>> {
    results.iter().map(|w| oos_r2(w, convention)).collect()
}

/// Mean of the per-window R² values.
pub fn mean_r2(results: &[WindowResult], convention: R2Convention) -> Result<f64> {
    let r = window_r2s(results, convention)?;
    if r.is_empty() {
        return Err(Error::EmptySupport("no windows".into()));
    }
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Mean absolute error over every cell of every window.
pub fn mae(results: &[WindowResult]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for w in results {
        total += (&w.actuals - &w.forecasts).abs().sum();
        count += w.actuals.len();
    }
    total / count as f64
}

/// Per-window mean squared error.
pub fn window_mse(w: &WindowResult) -> f64 {
    (&w.actuals - &w.forecasts).norm_squared() / w.actuals.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman correlation with midranks; `None` for a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&percentile_ranks(a), &percentile_ranks(b))
}

/// Cross-sectional rank IC per forecast quarter, windows in order.
pub fn spearman_ic(results: &[WindowResult]) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::new();
    for w in results {
        if w.actuals.nrows() < 3 {
            return Err(Error::Precondition("rank IC needs at least 3 actors".into()));
        }
        for q in 0..w.actuals.ncols() {
            let f: Vec<f64> = w.forecasts.column(q).iter().copied().collect();
            let a: Vec<f64> = w.actuals.column(q).iter().copied().collect();
            out.push(spearman(&f, &a));
        }
    }
    Ok(out)
}
