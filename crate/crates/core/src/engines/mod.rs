//! Stage-2 residual engines.
//!
//! Every engine is fitted on a block of Stage-1 residuals (rows = actors,
//! columns = training transitions) and maps the last residual vector to a
//! one-step residual forecast. All engines first remove the EWM mean `r̄`
//! and add it back after propagating.

mod basis;
mod dmd;
mod ewm;
mod kalman;
mod pca;
mod ridge;
mod var;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{check_orthonormal, eigenvalues, fix_signs, orthonormality_error, spectral_radius, SubspaceBasis};
pub use dmd::{exact_dmd, snapshot_rank, spectral_radius_clip, SPECTRAL_CAP};
pub use ewm::{decay, ewm_demean, ewm_weights, EwmDemeaner};
pub use kalman::{
    direct_gain, kalman_run, kalman_run_with_noise, reduced_gain, sigma2_perp, transition_matrix, woodbury_gain,
    KalmanParams, KalmanRun, KalmanState, ModalFilter, TransitionMode,
};
pub use pca::{fit_pca_basis, project};
pub use ridge::{fit_ridge_full, RidgeFullFit, DEFAULT_ALPHA_MULTIPLIERS, HOLDOUT};
pub use var::{fit_diag_ar, fit_ridge_var, ridge_map, RidgeVarFit, DEFAULT_VAR_LAMBDA};

/// Which residual model to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum EngineSpec {
    /// Weighted PCA with per-factor AR(1).
    PcaDiagAr { k: usize },
    /// Weighted PCA with a ridge VAR(1) on the factors.
    PcaRidgeVar { k: usize, lambda: f64 },
    /// Exact DMD with the clipped reduced propagator.
    Dmd { k: usize, transition: TransitionMode },
    /// Exact DMD basis driven through the modal Kalman filter.
    DmdKalman { k: usize, transition: TransitionMode },
    /// Full N-dimensional ridge map; penalties are multipliers times N.
    RidgeFull { alpha_multipliers: Vec<f64> },
}

impl EngineSpec {
    pub fn pca_ridge(k: usize) -> Self {
        EngineSpec::PcaRidgeVar { k, lambda: DEFAULT_VAR_LAMBDA }
    }

    pub fn ridge_full() -> Self {
        EngineSpec::RidgeFull { alpha_multipliers: DEFAULT_ALPHA_MULTIPLIERS.to_vec() }
    }

    /// Requested rank, if the engine has one.
    pub fn rank(&self) -> Option<usize> {
        match self {
            EngineSpec::PcaDiagAr { k }
            | EngineSpec::PcaRidgeVar { k, .. }
            | EngineSpec::Dmd { k, .. }
            | EngineSpec::DmdKalman { k, .. } => Some(*k),
            EngineSpec::RidgeFull { .. } => None,
        }
    }

    pub fn with_rank(&self, k: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            EngineSpec::PcaDiagAr { k: r }
            | EngineSpec::PcaRidgeVar { k: r, .. }
            | EngineSpec::Dmd { k: r, .. }
            | EngineSpec::DmdKalman { k: r, .. } => *r = k,
            EngineSpec::RidgeFull { .. } => {}
        }
        out
    }
}

/// Hyperparameters shared by all engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub half_life: f64,
    pub kalman: KalmanParams,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self { half_life: 12.0, kalman: KalmanParams::default() }
    }
}

/// Fitted one-step map on demeaned residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ResidualMap {
    /// Forecast is `r̄`.
    None,
    /// `U A Uᵀ r̃`.
    Subspace { u: DMatrix<f64>, a: DMatrix<f64> },
    /// Filter that has absorbed every training residual except the last.
    Kalman(ModalFilter),
    /// `C r̃`.
    Dense { coeffs: DMatrix<f64>, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEngine {
    pub mean: DVector<f64>,
    pub map: ResidualMap,
}

impl FittedEngine {
    /// Engine that always forecasts zero residuals.
    pub fn zeroed(n: usize) -> Self {
        Self { mean: DVector::zeros(n), map: ResidualMap::None }
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        match &self.map {
            ResidualMap::None => 0,
            ResidualMap::Subspace { u, .. } => u.ncols(),
            ResidualMap::Kalman(f) => f.u.ncols(),
            ResidualMap::Dense { coeffs, .. } => coeffs.nrows(),
        }
    }

    /// One-step residual forecast from the last observed residual vector.
    pub fn forecast_residual(&self, r_last: &DVector<f64>) -> Result<DVector<f64>> {
        if r_last.len() != self.n() {
            return Err(Error::Alignment { expected: self.n(), got: r_last.len() });
        }
        let centered = r_last - &self.mean;
        Ok(match &self.map {
            ResidualMap::None => self.mean.clone(),
            ResidualMap::Subspace { u, a } => u * (a * (u.transpose() * centered)) + &self.mean,
            ResidualMap::Kalman(filter) => {
                let mut f = filter.clone();
                f.step(r_last, usize::MAX)?;
                f.predict()
            }
            ResidualMap::Dense { coeffs, .. } => coeffs * centered + &self.mean,
        })
    }
}

/// Caps the rank at what the data can support, warning when it has to.
pub fn effective_rank(requested: usize, n: usize, t: usize) -> usize {
    let max = n.min(t.saturating_sub(1));
    let k = requested.min(max);
    if k < requested {
        warn!("rank {requested} reduced to {k} for a {n}-actor block with {t} residual quarters");
    }
    if k > 0 && t.saturating_sub(1) < 2 * k + 1 {
        warn!("underdetermined block: {} transitions for rank {k}", t.saturating_sub(1));
    }
    k
}

/// Fits `spec` on raw Stage-1 residuals (N×T, oldest first).
pub fn fit_engine(spec: &EngineSpec, residuals: &DMatrix<f64>, params: &EngineParams) -> Result<FittedEngine> {
    let (n, t) = residuals.shape();
    if n == 0 {
        return Err(Error::EmptySupport("engine fitted on an empty block".into()));
    }
    let (demeaned, demeaner) = ewm_demean(residuals, params.half_life)?;
    let mean = demeaner.mean.clone();
    let map = match spec {
        EngineSpec::PcaDiagAr { k } | EngineSpec::PcaRidgeVar { k, .. } => {
            let k = effective_rank(*k, n, t);
            if k == 0 {
                ResidualMap::None
            } else {
                let basis = fit_pca_basis(&demeaned, k, &demeaner.weights)?;
                let factors = project(&basis, &demeaned)?;
                let a = match spec {
                    EngineSpec::PcaRidgeVar { lambda, .. } => fit_ridge_var(&factors, *lambda)?.coeffs,
                    _ => fit_diag_ar(&factors)?,
                };
                ResidualMap::Subspace { u: basis.u, a }
            }
        }
        EngineSpec::Dmd { k, transition } | EngineSpec::DmdKalman { k, transition } => {
            let k = snapshot_rank(&demeaned, effective_rank(*k, n, t));
            if k == 0 {
                ResidualMap::None
            } else {
                let basis = exact_dmd(&demeaned, k, params.kalman.cap)?;
                if matches!(spec, EngineSpec::Dmd { .. }) {
                    let a = transition_matrix(&basis, *transition, params.kalman.cap);
                    ResidualMap::Subspace { u: basis.u, a }
                } else {
                    let sigma2 = sigma2_perp(&basis.u, &demeaned);
                    let mut filter = ModalFilter::new(&basis, &demeaner, *transition, &params.kalman, sigma2);
                    for s in 0..t - 1 {
                        filter.step(&residuals.column(s).into_owned(), s)?;
                    }
                    ResidualMap::Kalman(filter)
                }
            }
        }
        EngineSpec::RidgeFull { alpha_multipliers } => {
            let alphas: Vec<f64> = alpha_multipliers.iter().map(|m| m * n as f64).collect();
            let fit = fit_ridge_full(&demeaned, &alphas)?;
            ResidualMap::Dense { coeffs: fit.coeffs, alpha: fit.alpha }
        }
    };
    Ok(FittedEngine { mean, map })
}
