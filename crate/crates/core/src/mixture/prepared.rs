use nalgebra::{DMatrix, DVector};

use super::fit::{combine, fit_architecture, fit_stage2, Stage1Fit};
use super::spec::{ArchitectureKind, ArchitectureSpec};
use crate::engines::{fit_engine, FittedEngine};
use crate::error::Result;
use crate::panel::ResolvedBlock;
use crate::stage1::fit_pooled_ar1_fe_or_fallback;

/// Partition-independent work for one forecast origin: the pooled Stage 1
/// and the global residual engine. Reused across placebo permutations.
#[derive(Debug, Clone)]
pub struct PreparedOrigin {
    pub stage1: Stage1Fit,
    pub stage1_forecast: DVector<f64>,
    pub residuals: DMatrix<f64>,
    pub r_last: DVector<f64>,
    pub global: FittedEngine,
    pub global_forecast: DVector<f64>,
}

/// Whether `kind` can be served from a [`PreparedOrigin`].
pub fn cacheable(kind: ArchitectureKind) -> bool {
    matches!(
        kind,
        ArchitectureKind::G0 | ArchitectureKind::G1 | ArchitectureKind::S1 | ArchitectureKind::M1 | ArchitectureKind::M2
    )
}

pub fn prepare_origin(spec: &ArchitectureSpec, train: &DMatrix<f64>) -> Result<PreparedOrigin> {
    let stage1 = Stage1Fit::Pooled(fit_pooled_ar1_fe_or_fallback(train)?);
    let t = train.ncols();
    let stage1_forecast = stage1.forecast(&train.column(t - 1).into_owned())?;
    let residuals = stage1.residuals(train)?;
    let r_last = residuals.column(residuals.ncols() - 1).into_owned();
    let global = fit_engine(&spec.global_engine_spec(), &residuals, &spec.engine)?;
    let global_forecast = global.forecast_residual(&r_last)?;
    Ok(PreparedOrigin { stage1, stage1_forecast, residuals, r_last, global, global_forecast })
}

/// Forecast for the quarter after `train`, reusing `prepared` when the
/// architecture allows it.
pub fn forecast_origin(
    spec: &ArchitectureSpec,
    train: &DMatrix<f64>,
    blocks: &[ResolvedBlock],
    prepared: Option<&PreparedOrigin>,
) -> Result<DVector<f64>> {
    match prepared {
        Some(p) if cacheable(spec.kind) && !spec.zero_stage2 => {
            let fit = fit_stage2(spec, p.stage1.clone(), &p.residuals, blocks, Some(p.global.clone()))?;
            let mut r_hat = DVector::zeros(p.r_last.len());
            let local = fit
                .local
                .iter()
                .map(|l| l.engine.forecast_residual(&p.r_last.select_rows(l.rows.iter())))
                .collect::<Result<Vec<_>>>()?;
            for (i, route) in fit.routes.iter().enumerate() {
                r_hat[i] = match *route {
                    super::Route::Pooled => 0.0,
                    super::Route::Global => p.global_forecast[i],
                    super::Route::Local { fit, pos } => local[fit][pos],
                };
            }
            Ok(combine(&p.stage1_forecast, &r_hat, &fit.routes))
        }
        _ => fit_architecture(spec, train, blocks)?.forecast(train),
    }
}
