use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engines::HOLDOUT;
use crate::error::{Error, Result};
use crate::panel::ResolvedBlock;

/// Pooled ridge of `y_{i,t+1}` on `[y_{i,t}, y_{i,t}·d_1, …, y_{i,t}·d_B, d_1, …, d_B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleStageRidge {
    /// Block index of every actor.
    pub block_of: Vec<usize>,
    pub n_blocks: usize,
    pub coeffs: DVector<f64>,
    pub alpha: f64,
    pub cv_errors: Vec<f64>,
}

/// Design row for one actor-quarter.
pub fn design_row(y: f64, block: usize, n_blocks: usize) -> DVector<f64> {
    let mut x = DVector::zeros(1 + 2 * n_blocks);
    x[0] = y;
    x[1 + block] = y;
    x[1 + n_blocks + block] = 1.0;
    x
}

fn normal_equations(train: &DMatrix<f64>, block_of: &[usize], n_blocks: usize, transitions: usize) -> (DMatrix<f64>, DVector<f64>) {
    let p = 1 + 2 * n_blocks;
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for s in 0..transitions {
        for (i, &b) in block_of.iter().enumerate() {
            let x = design_row(train[(i, s)], b, n_blocks);
            xtx += &x * x.transpose();
            xty += &x * train[(i, s + 1)];
        }
    }
    (xtx, xty)
}

fn solve(xtx: &DMatrix<f64>, xty: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let p = xtx.nrows();
    let a = xtx + DMatrix::<f64>::identity(p, p) * alpha;
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(xty));
    }
    a.lu().solve(xty).ok_or_else(|| Error::DegenerateRegression("singular single-stage ridge system".into()))
}

/// Fits with hold-last-2 CV over `alpha_multipliers × N`; ties go to the
/// larger penalty.
pub fn single_stage_block_dummy_ridge(
    train: &DMatrix<f64>,
    blocks: &[ResolvedBlock],
    alpha_multipliers: &[f64],
) -> Result<SingleStageRidge> {
    let (n, t) = train.shape();
    if t < 3 + HOLDOUT {
        return Err(Error::Precondition(format!("single-stage ridge needs at least {} quarters", 3 + HOLDOUT)));
    }
    if alpha_multipliers.is_empty() {
        return Err(Error::Precondition("no ridge penalty candidates".into()));
    }
    let nonempty: Vec<&ResolvedBlock> = blocks.iter().filter(|b| !b.rows.is_empty()).collect();
    let n_blocks = nonempty.len();
    let mut block_of = vec![usize::MAX; n];
    for (k, b) in nonempty.iter().enumerate() {
        for &r in &b.rows {
            block_of[r] = k;
        }
    }
    if block_of.contains(&usize::MAX) {
        return Err(Error::InvalidPartition("single-stage ridge: actor outside every block".into()));
    }
    let alphas: Vec<f64> = alpha_multipliers.iter().map(|m| m * n as f64).collect();
    let fit_transitions = t - 1 - HOLDOUT;
    let (xtx_cv, xty_cv) = normal_equations(train, &block_of, n_blocks, fit_transitions);
    let mut cv_errors = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let beta = solve(&xtx_cv, &xty_cv, alpha)?;
        let mut err = 0.0;
        for s in fit_transitions..t - 1 {
            for (i, &b) in block_of.iter().enumerate() {
                let pred = design_row(train[(i, s)], b, n_blocks).dot(&beta);
                err += (train[(i, s + 1)] - pred).powi(2);
            }
        }
        cv_errors.push(err);
    }
    let mut best = 0;
    for (i, &e) in cv_errors.iter().enumerate().skip(1) {
        if e < cv_errors[best] || (e == cv_errors[best] && alphas[i] > alphas[best]) {
            best = i;
        }
    }
    let (xtx, xty) = normal_equations(train, &block_of, n_blocks, t - 1);
    let coeffs = solve(&xtx, &xty, alphas[best])?;
    Ok(SingleStageRidge { block_of, n_blocks, coeffs, alpha: alphas[best], cv_errors })
}

impl SingleStageRidge {
    pub fn forecast(&self, last_obs: &DVector<f64>) -> Result<DVector<f64>> {
        if last_obs.len() != self.block_of.len() {
            return Err(Error::Alignment { expected: self.block_of.len(), got: last_obs.len() });
        }
        Ok(DVector::from_fn(last_obs.len(), |i, _| {
            design_row(last_obs[i], self.block_of[i], self.n_blocks).dot(&self.coeffs)
        }))
    }

    /// Coefficients on the `y·d_b` interaction columns.
    pub fn interactions(&self) -> DVector<f64> {
        self.coeffs.rows(1, self.n_blocks).into_owned()
    }
}
