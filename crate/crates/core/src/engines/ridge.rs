use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::var::ridge_map;
use crate::error::{Error, Result};

/// Penalty multipliers; candidates are these times the state dimension.
pub const DEFAULT_ALPHA_MULTIPLIERS: [f64; 3] = [0.1, 1.0, 10.0];

/// Number of trailing transitions held out for penalty selection.
pub const HOLDOUT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFullFit {
    pub coeffs: DMatrix<f64>,
    pub alpha: f64,
    /// Hold-out squared error per candidate, in candidate order.
    pub cv_errors: Vec<f64>,
}

/// Hold-last-2 cross-validation over `alphas`, then a refit on all
/// transitions. Ties go to the larger penalty.
pub fn fit_ridge_full(demeaned: &DMatrix<f64>, alphas: &[f64]) -> Result<RidgeFullFit> {
    let t = demeaned.ncols();
    if t < 3 + HOLDOUT {
        return Err(Error::Precondition(format!("ridge CV needs at least {} quarters, got {t}", 3 + HOLDOUT)));
    }
    if alphas.is_empty() {
        return Err(Error::Precondition("no ridge penalty candidates".into()));
    }
    let fit_cols = t - HOLDOUT;
    let prev = demeaned.columns(0, fit_cols - 1).into_owned();
    let next = demeaned.columns(1, fit_cols - 1).into_owned();
    let mut cv_errors = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let c = ridge_map(&prev, &next, alpha)?;
        let mut err = 0.0;
        for s in fit_cols - 1..t - 1 {
            let pred = &c * demeaned.column(s);
            err += (demeaned.column(s + 1) - pred).norm_squared();
        }
        cv_errors.push(err);
    }
    let mut best = 0;
    for (i, &e) in cv_errors.iter().enumerate().skip(1) {
        let b = cv_errors[best];
        if e < b || (e == b && alphas[i] > alphas[best]) {
            best = i;
        }
    }
    let alpha = alphas[best];
    let coeffs = ridge_map(
        &demeaned.columns(0, t - 1).into_owned(),
        &demeaned.columns(1, t - 1).into_owned(),
        alpha,
    )?;
    Ok(RidgeFullFit { coeffs, alpha, cv_errors })
}
