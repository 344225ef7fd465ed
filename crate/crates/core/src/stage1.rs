//! Stage 1: pooled AR(1) with actor fixed effects.
//!
//! The forecast is `ȳ_i + ρ̂ (y_{i,t} − ȳ_i)` with `ȳ_i` the training mean of
//! actor `i` and `ρ̂` the within-transformation OLS slope over all actors
//! stacked. The block variant estimates one `ρ̂_b` per block.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::ResolvedBlock;

/// Persistence is clipped to `[-RHO_CLIP, RHO_CLIP]` before forecasting.
pub const RHO_CLIP: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledAR1Fit {
    /// Clipped persistence used for forecasting.
    pub rho: f64,
    /// Unclipped OLS slope (0 when degenerate).
    pub rho_raw: f64,
    pub actor_means: DVector<f64>,
    /// Number of training quarters the fit used.
    pub train_len: usize,
    /// True when the demeaned regressor had no variance and `rho` fell back to 0.
    pub degenerate: bool,
}

/// Per-actor training means, accumulated left to right.
fn row_means(train: &DMatrix<f64>) -> DVector<f64> {
    let t = train.ncols() as f64;
    DVector::from_iterator(train.nrows(), train.row_iter().map(|r| r.iter().sum::<f64>() / t))
}

/// Within-transformation OLS on the whole training matrix (N×T).
pub fn fit_pooled_ar1_fe(train: &DMatrix<f64>) -> Result<PooledAR1Fit> {
    let fit = fit_pooled_ar1_fe_or_fallback(train)?;
    if fit.degenerate {
        return Err(Error::DegenerateRegression("demeaned lagged values have zero variance".into()));
    }
    Ok(fit)
}

/// As [`fit_pooled_ar1_fe`], but a degenerate regression yields `ρ̂ = 0`
/// (forecast = actor means) flagged via `degenerate`.
pub fn fit_pooled_ar1_fe_or_fallback(train: &DMatrix<f64>) -> Result<PooledAR1Fit> {
    let (n, t) = train.shape();
    if t < 3 {
        return Err(Error::Precondition(format!("pooled AR(1) needs at least 3 training quarters, got {t}")));
    }
    if n == 0 {
        return Err(Error::EmptySupport("no actors to fit".into()));
    }
    let means = row_means(train);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut scale = 0.0;
    for i in 0..n {
        let m = means[i];
        for s in 1..t {
            let x = train[(i, s - 1)] - m;
            let y = train[(i, s)] - m;
            sxy += x * y;
            sxx += x * x;
            scale += train[(i, s - 1)] * train[(i, s - 1)];
        }
    }
    let degenerate = !(sxx > 1e-24 * scale.max(1e-300));
    let rho_raw = if degenerate { 0.0 } else { sxy / sxx };
    Ok(PooledAR1Fit {
        rho: rho_raw.clamp(-RHO_CLIP, RHO_CLIP),
        rho_raw,
        actor_means: means,
        train_len: t,
        degenerate,
    })
}

impl PooledAR1Fit {
    pub fn n_actors(&self) -> usize {
        self.actor_means.len()
    }

    /// One-step forecast from the last observation of every actor.
    pub fn forecast(&self, last_obs: &DVector<f64>) -> Result<DVector<f64>> {
        if last_obs.len() != self.actor_means.len() {
            return Err(Error::Alignment { expected: self.actor_means.len(), got: last_obs.len() });
        }
        Ok(self.actor_means.zip_map(last_obs, |m, y| m + self.rho * (y - m)))
    }

    /// In-sample residuals `y_t − ŷ_t` for training columns `1..T` (N×(T−1)).
    pub fn residuals(&self, train: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if train.nrows() != self.n_actors() {
            return Err(Error::Alignment { expected: self.n_actors(), got: train.nrows() });
        }
        let t = train.ncols();
        Ok(DMatrix::from_fn(train.nrows(), t - 1, |i, s| {
            let m = self.actor_means[i];
            train[(i, s + 1)] - (m + self.rho * (train[(i, s)] - m))
        }))
    }
}

/// A pooled fit per block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockFit {
    pub block_id: String,
    pub rows: Vec<usize>,
    pub fit: PooledAR1Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAR1Fit {
    pub n_actors: usize,
    pub per_block: Vec<BlockFit>,
}

/// One pooled AR(1)+FE per block, each on its own actors only. Degenerate
/// blocks fall back to `ρ̂_b = 0` and are logged.
pub fn fit_block_ar1_fe(train: &DMatrix<f64>, blocks: &[ResolvedBlock]) -> Result<BlockAR1Fit> {
    let n = train.nrows();
    let mut covered = vec![false; n];
    let mut per_block = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.rows.is_empty() {
            continue;
        }
        for &r in &b.rows {
            if r >= n || covered[r] {
                return Err(Error::InvalidPartition(format!("row {r} missing or assigned twice")));
            }
            covered[r] = true;
        }
        let sub = train.select_rows(b.rows.iter());
        let fit = fit_pooled_ar1_fe_or_fallback(&sub)?;
        if fit.degenerate {
            log::warn!("block '{}': degenerate persistence regression, using rho = 0", b.id);
        }
        per_block.push(BlockFit { block_id: b.id.clone(), rows: b.rows.clone(), fit });
    }
    if let Some(r) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidPartition(format!("row {r} not in any block")));
    }
    Ok(BlockAR1Fit { n_actors: n, per_block })
}

impl BlockAR1Fit {
    pub fn forecast(&self, last_obs: &DVector<f64>) -> Result<DVector<f64>> {
        if last_obs.len() != self.n_actors {
            return Err(Error::Alignment { expected: self.n_actors, got: last_obs.len() });
        }
        let mut out = DVector::zeros(self.n_actors);
        for b in &self.per_block {
            let sub = last_obs.select_rows(b.rows.iter());
            let f = b.fit.forecast(&sub)?;
            for (k, &r) in b.rows.iter().enumerate() {
                out[r] = f[k];
            }
        }
        Ok(out)
    }

    pub fn residuals(&self, train: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if train.nrows() != self.n_actors {
            return Err(Error::Alignment { expected: self.n_actors, got: train.nrows() });
        }
        let mut out = DMatrix::zeros(self.n_actors, train.ncols() - 1);
        for b in &self.per_block {
            let r = b.fit.residuals(&train.select_rows(b.rows.iter()))?;
            for (k, &row) in b.rows.iter().enumerate() {
                out.row_mut(row).copy_from(&r.row(k));
            }
        }
        Ok(out)
    }
}

/// Per-actor AR(1) with its own mean: the block fit with singleton blocks.
pub fn fit_per_actor_ar1(train: &DMatrix<f64>) -> Result<BlockAR1Fit> {
    let blocks: Vec<ResolvedBlock> = (0..train.nrows())
        .map(|i| ResolvedBlock { id: format!("actor{i}"), rows: vec![i], local: false })
        .collect();
    fit_block_ar1_fe(train, &blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn simulate(n: usize, t: usize, rho: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut y = DMatrix::zeros(n, t);
        for i in 0..n {
            let mu = i as f64 * 0.3 - 2.0;
            let mut x = mu + noise.sample(&mut rng);
            for s in 0..t {
                x = mu + rho * (x - mu) + noise.sample(&mut rng);
                y[(i, s)] = x;
            }
        }
        y
    }

    #[test]
    fn constant_panel_is_degenerate() {
        let y = DMatrix::from_fn(4, 6, |i, _| 0.1 * (i as f64 + 1.0));
        assert!(matches!(fit_pooled_ar1_fe(&y).unwrap_err(), Error::DegenerateRegression(_)));
        let fb = fit_pooled_ar1_fe_or_fallback(&y).unwrap();
        assert!(fb.degenerate);
        let last = y.column(5).into_owned();
        let f = fb.forecast(&last).unwrap();
        assert!((f - &fb.actor_means).amax() < 1e-15);
    }

    #[test]
    fn recovers_simulated_rho() {
        let y = simulate(50, 200, 0.5, 1);
        let fit = fit_pooled_ar1_fe(&y).unwrap();
        assert!((0.45..=0.55).contains(&fit.rho), "rho = {}", fit.rho);
    }

    #[test]
    fn single_actor_matches_direct_ols() {
        let y = simulate(1, 40, 0.7, 2);
        let fit = fit_pooled_ar1_fe(&y).unwrap();
        // direct 2-variable regression through the origin on demeaned pairs
        let row: Vec<f64> = y.row(0).iter().copied().collect();
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let xs: Vec<f64> = row[..row.len() - 1].iter().map(|v| v - m).collect();
        let ys: Vec<f64> = row[1..].iter().map(|v| v - m).collect();
        let beta = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
        assert!((fit.rho_raw - beta).abs() < 1e-12);
    }

    #[test]
    fn forecast_fixed_points() {
        let fit = PooledAR1Fit {
            rho: 0.37,
            rho_raw: 0.37,
            actor_means: DVector::from_vec(vec![0.2, 0.5, 0.9]),
            train_len: 10,
            degenerate: false,
        };
        assert_eq!(fit.forecast(&fit.actor_means).unwrap(), fit.actor_means);
        let last = DVector::from_vec(vec![0.0, 1.0, 0.3]);
        let zero = PooledAR1Fit { rho: 0.0, ..fit.clone() };
        assert_eq!(zero.forecast(&last).unwrap(), fit.actor_means);
        let one = PooledAR1Fit { rho: 1.0, ..fit.clone() };
        assert!((one.forecast(&last).unwrap() - &last).amax() < 1e-15);
        assert!(matches!(fit.forecast(&DVector::zeros(2)).unwrap_err(), Error::Alignment { .. }));
    }

    #[test]
    fn single_block_equals_pooled_bitwise() {
        let y = simulate(7, 30, 0.6, 3);
        let pooled = fit_pooled_ar1_fe(&y).unwrap();
        let blocks = vec![ResolvedBlock { id: "all".into(), rows: (0..7).collect(), local: false }];
        let block = fit_block_ar1_fe(&y, &blocks).unwrap();
        assert_eq!(block.per_block[0].fit, pooled);
        let last = y.column(29).into_owned();
        assert_eq!(block.forecast(&last).unwrap(), pooled.forecast(&last).unwrap());
        assert_eq!(block.residuals(&y).unwrap(), pooled.residuals(&y).unwrap());
    }

    #[test]
    fn recovers_block_specific_rho() {
        let a = simulate(40, 200, 0.9, 4);
        let b = simulate(40, 200, 0.2, 5);
        let y = DMatrix::from_fn(80, 200, |i, t| if i < 40 { a[(i, t)] } else { b[(i - 40, t)] });
        let blocks = vec![
            ResolvedBlock { id: "hi".into(), rows: (0..40).collect(), local: true },
            ResolvedBlock { id: "lo".into(), rows: (40..80).collect(), local: false },
        ];
        let fit = fit_block_ar1_fe(&y, &blocks).unwrap();
        assert!((fit.per_block[0].fit.rho - 0.9).abs() < 0.08);
        assert!((fit.per_block[1].fit.rho - 0.2).abs() < 0.08);
    }

    #[test]
    fn constant_block_falls_back() {
        let mut y = simulate(6, 20, 0.5, 6);
        for t in 0..20 {
            y[(0, t)] = 0.25;
            y[(1, t)] = 0.75;
        }
        let blocks = vec![
            ResolvedBlock { id: "flat".into(), rows: vec![0, 1], local: false },
            ResolvedBlock { id: "rest".into(), rows: (2..6).collect(), local: false },
        ];
        let fit = fit_block_ar1_fe(&y, &blocks).unwrap();
        assert!(fit.per_block[0].fit.degenerate);
        assert_eq!(fit.per_block[0].fit.rho, 0.0);
        let f = fit.forecast(&y.column(19).into_owned()).unwrap();
        assert!((f[0] - 0.25).abs() < 1e-15 && (f[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn fit_ignores_future_quarters() {
        let y = simulate(5, 40, 0.5, 7);
        let head = y.columns(0, 30).into_owned();
        let a = fit_pooled_ar1_fe(&head).unwrap();
        let b = fit_pooled_ar1_fe(&y.columns(0, 30).into_owned()).unwrap();
        assert_eq!(a, b);
    }
}
