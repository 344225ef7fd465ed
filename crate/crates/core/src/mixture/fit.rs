use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::single_stage::{single_stage_block_dummy_ridge, SingleStageRidge};
use super::spec::{ArchitectureKind, ArchitectureSpec};
use crate::engines::{fit_engine, FittedEngine};
use crate::error::{Error, Result};
use crate::panel::ResolvedBlock;
use crate::stage1::{fit_block_ar1_fe, fit_per_actor_ar1, fit_pooled_ar1_fe_or_fallback, BlockAR1Fit, PooledAR1Fit};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Stage1Fit {
    Pooled(PooledAR1Fit),
    Block(BlockAR1Fit),
}

impl Stage1Fit {
    pub fn forecast(&self, last_obs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Stage1Fit::Pooled(f) => f.forecast(last_obs),
            Stage1Fit::Block(f) => f.forecast(last_obs),
        }
    }

    pub fn residuals(&self, train: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Stage1Fit::Pooled(f) => f.residuals(train),
            Stage1Fit::Block(f) => f.residuals(train),
        }
    }
}

/// Residual route of one actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Route {
    /// Stage 1 only.
    Pooled,
    Global,
    /// Position `pos` inside local fit `fit`.
    Local { fit: usize, pos: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalFit {
    pub block_id: String,
    pub rows: Vec<usize>,
    pub engine: FittedEngine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStageFit {
    pub kind: ArchitectureKind,
    pub stage1: Stage1Fit,
    pub global: Option<FittedEngine>,
    pub local: Vec<LocalFit>,
    pub routes: Vec<Route>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(clippy::large_enum_variant)]
pub enum MixtureFit {
    TwoStage(TwoStageFit),
    Ensemble { members: Vec<MixtureFit> },
    SingleStage(SingleStageRidge),
}

fn require_blocks(spec: &ArchitectureSpec, blocks: &[ResolvedBlock], n: usize) -> Result<()> {
    if spec.kind.needs_partition() && blocks.iter().all(|b| b.rows.is_empty()) {
        return Err(Error::Precondition(format!("architecture {} needs a block partition", spec.kind)));
    }
    let covered: usize = blocks.iter().map(|b| b.rows.len()).sum();
    if spec.kind.needs_partition() && covered != n {
        return Err(Error::InvalidPartition(format!("partition covers {covered} of {n} actors")));
    }
    Ok(())
}

/// Fits one architecture on a training matrix (N×T, oldest quarter first).
pub fn fit_architecture(spec: &ArchitectureSpec, train: &DMatrix<f64>, blocks: &[ResolvedBlock]) -> Result<MixtureFit> {
    spec.validate()?;
    let n = train.nrows();
    require_blocks(spec, blocks, n)?;
    use ArchitectureKind::*;
    match spec.kind {
        Ens => {
            let g1 = fit_architecture(&spec.with_kind(G1), train, blocks)?;
            let ba = fit_architecture(&spec.with_kind(Ba), train, blocks)?;
            Ok(MixtureFit::Ensemble { members: vec![g1, ba] })
        }
        Ssr => Ok(MixtureFit::SingleStage(single_stage_block_dummy_ridge(
            train,
            blocks,
            &spec.ridge_alpha_multipliers,
        )?)),
        kind => {
            let stage1 = match kind {
                Ba | BaM2 => Stage1Fit::Block(fit_block_ar1_fe(train, blocks)?),
                Ar1 => Stage1Fit::Block(fit_per_actor_ar1(train)?),
                _ => Stage1Fit::Pooled(fit_pooled_ar1_fe_or_fallback(train)?),
            };
            let residuals = stage1.residuals(train)?;
            let mut fit = fit_stage2(spec, stage1, &residuals, blocks, None)?;
            if spec.zero_stage2 {
                fit.zero_stage2();
            }
            Ok(MixtureFit::TwoStage(fit))
        }
    }
}

/// Fits the Stage-2 routes on given residuals. A prefitted global engine
/// is reused when supplied.
pub(crate) fn fit_stage2(
    spec: &ArchitectureSpec,
    stage1: Stage1Fit,
    residuals: &DMatrix<f64>,
    blocks: &[ResolvedBlock],
    global: Option<FittedEngine>,
) -> Result<TwoStageFit> {
    use ArchitectureKind::*;
    let n = residuals.nrows();
    let kind = spec.kind;
    let uses_global = matches!(kind, G1 | S1 | M1 | M2 | BaM2);
    let local_kind = matches!(kind, M1 | M2 | BaM2);
    let mut routes = vec![if uses_global { Route::Global } else { Route::Pooled }; n];
    if kind == S1 {
        for b in blocks.iter().filter(|b| b.local) {
            for &r in &b.rows {
                routes[r] = Route::Pooled;
            }
        }
    }
    let mut local = Vec::new();
    if local_kind {
        for b in blocks.iter().filter(|b| b.local && !b.rows.is_empty()) {
            let sub = residuals.select_rows(b.rows.iter());
            let engine = fit_engine(&spec.local_engine_spec(b.rows.len()), &sub, &spec.engine)?;
            for (pos, &r) in b.rows.iter().enumerate() {
                routes[r] = Route::Local { fit: local.len(), pos };
            }
            local.push(LocalFit { block_id: b.id.clone(), rows: b.rows.clone(), engine });
        }
    }
    let needs_global = routes.contains(&Route::Global);
    let global = match (needs_global, global) {
        (false, _) => None,
        (true, Some(g)) => Some(g),
        (true, None) => Some(fit_engine(&spec.global_engine_spec(), residuals, &spec.engine)?),
    };
    Ok(TwoStageFit { kind, stage1, global, local, routes })
}

impl TwoStageFit {
    /// Replaces every Stage-2 map, including its mean offset, by zero.
    pub fn zero_stage2(&mut self) {
        if let Some(g) = &mut self.global {
            *g = FittedEngine::zeroed(g.n());
        }
        for l in &mut self.local {
            l.engine = FittedEngine::zeroed(l.rows.len());
        }
    }

    pub fn n_actors(&self) -> usize {
        self.routes.len()
    }

    /// Residual forecast per actor given the last Stage-1 residual vector.
    pub fn residual_forecast(&self, r_last: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_actors();
        let global = match &self.global {
            Some(g) => Some(g.forecast_residual(r_last)?),
            None => None,
        };
        let local = self
            .local
            .iter()
            .map(|l| l.engine.forecast_residual(&r_last.select_rows(l.rows.iter())))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_fn(n, |i, _| match self.routes[i] {
            Route::Pooled => 0.0,
            Route::Global => global.as_ref().expect("global route has an engine")[i],
            Route::Local { fit, pos } => local[fit][pos],
        }))
    }

    /// Stage-1 forecast plus routed residual forecast.
    pub fn forecast(&self, upto: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (y_prev, y_last) = last_two(upto, self.n_actors())?;
        let stage1 = self.stage1.forecast(&y_last)?;
        let r_last = &y_last - self.stage1.forecast(&y_prev)?;
        let r_hat = self.residual_forecast(&r_last)?;
        Ok(combine(&stage1, &r_hat, &self.routes))
    }
}

/// Adds residual forecasts on augmented routes only, so pooled-only actors
/// carry the Stage-1 value untouched.
pub(crate) fn combine(stage1: &DVector<f64>, r_hat: &DVector<f64>, routes: &[Route]) -> DVector<f64> {
    DVector::from_fn(stage1.len(), |i, _| match routes[i] {
        Route::Pooled => stage1[i],
        _ => stage1[i] + r_hat[i],
    })
}

pub(crate) fn last_two(upto: &DMatrix<f64>, n: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    if upto.nrows() != n {
        return Err(Error::Alignment { expected: n, got: upto.nrows() });
    }
    let t = upto.ncols();
    if t < 2 {
        return Err(Error::EmptySupport("forecast needs the last two quarters".into()));
    }
    Ok((upto.column(t - 2).into_owned(), upto.column(t - 1).into_owned()))
}

impl MixtureFit {
    /// One-step forecast for the quarter after the last column of `upto`.
    pub fn forecast(&self, upto: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            MixtureFit::TwoStage(f) => f.forecast(upto),
            MixtureFit::Ensemble { members } => {
                let mut acc: Option<DVector<f64>> = None;
                for m in members {
                    let f = m.forecast(upto)?;
                    acc = Some(match acc {
                        None => f,
                        Some(a) => a + f,
                    });
                }
                Ok(acc.expect("ensemble has members") / members.len() as f64)
            }
            MixtureFit::SingleStage(s) => {
                let t = upto.ncols();
                if t == 0 {
                    return Err(Error::EmptySupport("no quarters to forecast from".into()));
                }
                s.forecast(&upto.column(t - 1).into_owned())
            }
        }
    }

    pub fn zero_stage2(&mut self) {
        match self {
            MixtureFit::TwoStage(f) => f.zero_stage2(),
            MixtureFit::Ensemble { members } => members.iter_mut().for_each(MixtureFit::zero_stage2),
            MixtureFit::SingleStage(_) => {}
        }
    }
}

/// Forecast from a fitted architecture; `upto` ends at the forecast origin.
pub fn forecast_architecture(fit: &MixtureFit, upto: &DMatrix<f64>) -> Result<DVector<f64>> {
    fit.forecast(upto)
}
