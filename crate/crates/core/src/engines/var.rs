use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage1::RHO_CLIP;

/// Default ridge penalty of the local factor VAR.
pub const DEFAULT_VAR_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeVarFit {
    pub coeffs: DMatrix<f64>,
    pub lambda: f64,
}

fn check_len(factors: &DMatrix<f64>) -> Result<usize> {
    let t = factors.ncols();
    if t < 3 {
        return Err(Error::Precondition(format!("factor regression needs at least 3 quarters, got {t}")));
    }
    Ok(t)
}

/// Per-factor AR(1) slopes without intercept, as a diagonal matrix.
pub fn fit_diag_ar(factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = check_len(factors)?;
    let k = factors.nrows();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let row = factors.row(i);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for s in 1..t {
            sxy += row[s] * row[s - 1];
            sxx += row[s - 1] * row[s - 1];
        }
        a[(i, i)] = if sxx > 0.0 { (sxy / sxx).clamp(-RHO_CLIP, RHO_CLIP) } else { 0.0 };
    }
    Ok(a)
}

/// Ridge VAR(1): `Â = F₊F₋ᵀ(F₋F₋ᵀ + λI)⁻¹`.
pub fn fit_ridge_var(factors: &DMatrix<f64>, lambda: f64) -> Result<RidgeVarFit> {
    let t = check_len(factors)?;
    if !(lambda >= 0.0) {
        return Err(Error::Precondition(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    let prev = factors.columns(0, t - 1);
    let next = factors.columns(1, t - 1);
    let coeffs = ridge_map(&prev.into_owned(), &next.into_owned(), lambda)?;
    Ok(RidgeVarFit { coeffs, lambda })
}

/// Solves `min_C Σ ‖next_t − C prev_t‖² + α‖C‖²_F` for square `C`.
///
/// Uses the primal normal equations when the state dimension is at most
/// the number of transitions and the dual form otherwise.
pub fn ridge_map(prev: &DMatrix<f64>, next: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let (d, m) = prev.shape();
    if next.shape() != (d, m) {
        return Err(Error::Alignment { expected: m, got: next.ncols() });
    }
    if d <= m {
        // Cᵀ = (X₋X₋ᵀ + αI)⁻¹ X₋X₊ᵀ
        let gram = prev * prev.transpose() + DMatrix::<f64>::identity(d, d) * alpha;
        let rhs = prev * next.transpose();
        Ok(solve_spd(gram, rhs)?.transpose())
    } else {
        // C = X₊ (X₋ᵀX₋ + αI)⁻¹ X₋ᵀ
        let gram = prev.transpose() * prev + DMatrix::<f64>::identity(m, m) * alpha;
        let rhs = prev.transpose();
        Ok(next * solve_spd(gram, rhs)?)
    }
}

pub(crate) fn solve_spd(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateRegression("singular normal equations".into()))
}
