use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponentially weighted mean of a residual matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmDemeaner {
    pub half_life: f64,
    pub weights: DVector<f64>,
    pub mean: DVector<f64>,
}

/// Per-quarter decay factor for a half-life in quarters.
pub fn decay(half_life: f64) -> f64 {
    0.5f64.powf(1.0 / half_life)
}

/// Normalized weights `λ^(T-1-t)`, newest quarter heaviest.
pub fn ewm_weights(t: usize, half_life: f64) -> Result<DVector<f64>> {
    if !(half_life > 0.0) {
        return Err(Error::Precondition(format!("half-life must be positive, got {half_life}")));
    }
    if t == 0 {
        return Err(Error::EmptySupport("no quarters to weight".into()));
    }
    let lambda = decay(half_life);
    let mut w = DVector::from_fn(t, |s, _| lambda.powi((t - 1 - s) as i32));
    let total = w.sum();
    w /= total;
    Ok(w)
}

/// Subtracts the EWM mean from every column.
pub fn ewm_demean(residuals: &DMatrix<f64>, half_life: f64) -> Result<(DMatrix<f64>, EwmDemeaner)> {
    let t = residuals.ncols();
    if t < 2 {
        return Err(Error::Precondition(format!("EWM demeaning needs at least 2 quarters, got {t}")));
    }
    let weights = ewm_weights(t, half_life)?;
    let mean = residuals * &weights;
    let mut demeaned = residuals.clone();
    for mut col in demeaned.column_iter_mut() {
        col -= &mean;
    }
    Ok((demeaned, EwmDemeaner { half_life, weights, mean }))
}
