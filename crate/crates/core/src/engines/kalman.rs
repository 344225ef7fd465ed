use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{spectral_radius, SubspaceBasis};
use super::dmd::spectral_radius_clip;
use super::ewm::EwmDemeaner;
use super::var::solve_spd;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Initial process noise scale, `Q₀ = q0·I`.
    pub q0: f64,
    /// Smoothing weight on the newest state correction in the Q update.
    pub lambda_q: f64,
    /// Ridge added to Q after every update.
    pub q_floor: f64,
    /// Spectral radius cap for the transition.
    pub cap: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self { q0: 0.5, lambda_q: 0.3, q_floor: 1e-6, cap: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionMode {
    #[default]
    Diag,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub alpha: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub sigma2_perp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    /// Column t is the prediction `U α_{t|t-1} + r̄` of residual t.
    pub forecasts: DMatrix<f64>,
    /// One step past the last column: `U F α_{T|T} + r̄`.
    pub next: DVector<f64>,
    pub state: KalmanState,
    pub transition: DMatrix<f64>,
    /// Smallest eigenvalue of the symmetrized `P_{t|t}` after each update.
    pub p_min_eig: Vec<f64>,
    /// Largest `|P - Pᵀ|` entry after each update.
    pub p_asymmetry: Vec<f64>,
}

/// State transition used by the filter.
pub fn transition_matrix(basis: &SubspaceBasis, mode: TransitionMode, cap: f64) -> DMatrix<f64> {
    let a = match mode {
        TransitionMode::Full => basis.a_reduced.clone(),
        TransitionMode::Diag => DMatrix::from_diagonal(&basis.a_reduced.diagonal()),
    };
    spectral_radius_clip(&a, cap).0
}

/// Mean squared residual of `demeaned` outside the span of `u`.
pub fn sigma2_perp(u: &DMatrix<f64>, demeaned: &DMatrix<f64>) -> f64 {
    let proj = u * (u.transpose() * demeaned);
    (demeaned - proj).norm_squared() / demeaned.len() as f64
}

/// Gain in modal coordinates, `G = P(P + σ²I)⁻¹`; the full Kalman gain is `G Uᵀ`.
pub fn reduced_gain(p: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let k = p.nrows();
    let s = p + DMatrix::<f64>::identity(k, k) * sigma2;
    // G = P S⁻¹ = (S⁻¹ P)ᵀ for symmetric P and S.
    Ok(solve_spd(s, p.clone())?.transpose())
}

/// `P Uᵀ S⁻¹` with `S⁻¹` from the Woodbury identity (K×K inversions only).
pub fn woodbury_gain(u: &DMatrix<f64>, p: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let (n, k) = u.shape();
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateRegression("singular predicted covariance".into()))?;
    let inner = (DMatrix::<f64>::identity(k, k) / sigma2 + p_inv)
        .try_inverse()
        .ok_or_else(|| Error::DegenerateRegression("singular Woodbury core".into()))?;
    let s_inv = (DMatrix::<f64>::identity(n, n) - u * inner * u.transpose() / sigma2) / sigma2;
    Ok(p * u.transpose() * s_inv)
}

/// `P Uᵀ (U P Uᵀ + σ²I)⁻¹` by direct N×N inversion.
pub fn direct_gain(u: &DMatrix<f64>, p: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    let s = u * p * u.transpose() + DMatrix::<f64>::identity(n, n) * sigma2;
    let s_inv = s.try_inverse().ok_or_else(|| Error::DegenerateRegression("singular innovation covariance".into()))?;
    Ok(p * u.transpose() * s_inv)
}

/// Runs the modal Kalman filter through every column of `residuals`.
///
/// The observation noise is the mean squared out-of-subspace residual of
/// the demeaned training data.
pub fn kalman_run(
    basis: &SubspaceBasis,
    demeaner: &EwmDemeaner,
    residuals: &DMatrix<f64>,
    mode: TransitionMode,
    params: &KalmanParams,
) -> Result<KalmanRun> {
    let demeaned = demean(demeaner, residuals)?;
    let sigma2 = sigma2_perp(&basis.u, &demeaned);
    kalman_run_with_noise(basis, demeaner, residuals, mode, params, sigma2)
}

/// As [`kalman_run`] with an explicit observation noise variance.
pub fn kalman_run_with_noise(
    basis: &SubspaceBasis,
    demeaner: &EwmDemeaner,
    residuals: &DMatrix<f64>,
    mode: TransitionMode,
    params: &KalmanParams,
    sigma2: f64,
) -> Result<KalmanRun> {
    let (n, t) = residuals.shape();
    let k = basis.k();
    if basis.n() != n {
        return Err(Error::Alignment { expected: basis.n(), got: n });
    }
    if k > n {
        return Err(Error::RankOverflow { k, max: n });
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Precondition(format!("observation noise must be non-negative, got {sigma2}")));
    }
    let mut filter = ModalFilter::new(basis, demeaner, mode, params, sigma2);
    let mut forecasts = DMatrix::zeros(n, t);
    let mut p_min_eig = Vec::with_capacity(t);
    let mut p_asymmetry = Vec::with_capacity(t);
    for s in 0..t {
        let prediction = filter.step(&residuals.column(s).into_owned(), s)?;
        forecasts.set_column(s, &prediction);
        let p = &filter.state.p;
        p_asymmetry.push((p - p.transpose()).amax());
        let sym = (p + p.transpose()) * 0.5;
        p_min_eig.push(sym.symmetric_eigenvalues().min());
    }
    Ok(KalmanRun {
        forecasts,
        next: filter.predict(),
        transition: filter.f.clone(),
        state: filter.state,
        p_min_eig,
        p_asymmetry,
    })
}

/// Filter recursion in modal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalFilter {
    pub u: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub params: KalmanParams,
    pub state: KalmanState,
}

impl ModalFilter {
    /// Fresh filter at `α₀ = 0`, `P₀ = I`, `Q₀ = q0·I`.
    pub fn new(
        basis: &SubspaceBasis,
        demeaner: &EwmDemeaner,
        mode: TransitionMode,
        params: &KalmanParams,
        sigma2: f64,
    ) -> Self {
        let k = basis.k();
        let f = transition_matrix(basis, mode, params.cap);
        debug_assert!(spectral_radius(&f) <= params.cap * (1.0 + 1e-12));
        let eye = DMatrix::<f64>::identity(k, k);
        Self {
            u: basis.u.clone(),
            f,
            mean: demeaner.mean.clone(),
            params: *params,
            state: KalmanState { alpha: DVector::zeros(k), q: &eye * params.q0, p: eye, sigma2_perp: sigma2 },
        }
    }

    /// Predicts residual `r`, then updates on it. Returns the prediction
    /// `U α_{t|t-1} + r̄`.
    pub fn step(&mut self, r: &DVector<f64>, quarter: usize) -> Result<DVector<f64>> {
        if r.len() != self.u.nrows() {
            return Err(Error::Alignment { expected: self.u.nrows(), got: r.len() });
        }
        let k = self.u.ncols();
        let eye = DMatrix::<f64>::identity(k, k);
        let KalmanState { alpha, p, q, sigma2_perp } = &mut self.state;
        let sigma2 = *sigma2_perp;

        let alpha_pred = &self.f * &*alpha;
        let p_pred = &self.f * &*p * self.f.transpose() + &*q;
        let prediction = &self.u * &alpha_pred + &self.mean;

        let z = self.u.transpose() * (r - &self.mean);
        let innovation = &z - &alpha_pred;
        if innovation.iter().any(|v| !v.is_finite()) {
            return Err(Error::FilterDivergence { quarter });
        }
        let g = reduced_gain(&p_pred, sigma2).map_err(|_| Error::FilterDivergence { quarter })?;
        let correction = &g * innovation;
        *alpha = &alpha_pred + &correction;
        let i_g = &eye - &g;
        *p = &i_g * &p_pred * i_g.transpose() + &g * g.transpose() * sigma2;

        let smoothed = &*q * (1.0 - self.params.lambda_q) + &correction * correction.transpose() * self.params.lambda_q;
        *q = (&smoothed + smoothed.transpose()) * 0.5 + &eye * self.params.q_floor;

        if alpha.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::FilterDivergence { quarter });
        }
        Ok(prediction)
    }

    /// One-step forecast from the current filtered state, `U F α + r̄`.
    pub fn predict(&self) -> DVector<f64> {
        &self.u * (&self.f * &self.state.alpha) + &self.mean
    }
}

fn demean(demeaner: &EwmDemeaner, residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if demeaner.mean.len() != residuals.nrows() {
        return Err(Error::Alignment { expected: demeaner.mean.len(), got: residuals.nrows() });
    }
    let mut d = residuals.clone();
    for mut col in d.column_iter_mut() {
        col -= &demeaner.mean;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::super::dmd::exact_dmd;
    use super::super::ewm::ewm_demean;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_input_stays_zero() {
        let r = DMatrix::zeros(6, 30);
        let (_, dm) = ewm_demean(&r, 12.0).unwrap();
        let u = DMatrix::identity(6, 2);
        let basis = SubspaceBasis::new(u, DMatrix::from_diagonal_element(2, 2, 0.5), 1.0);
        let run = kalman_run(&basis, &dm, &r, TransitionMode::Diag, &KalmanParams::default()).unwrap();
        assert!(run.forecasts.iter().all(|&v| v == 0.0));
        assert!(run.next.iter().all(|&v| v == 0.0));
        // Corrections vanish, so Q decays geometrically toward the floor.
        assert!(run.state.q.diagonal().iter().all(|v| (1e-6..1e-4).contains(v)));
    }

    #[test]
    fn gains_agree_across_forms() {
        let n = 12;
        let x = gaussian(n, 40, 3);
        let (d, _) = ewm_demean(&x, 12.0).unwrap();
        let b = exact_dmd(&d, 4, 0.99).unwrap();
        let a = gaussian(4, 4, 5);
        let p = &a * a.transpose() + DMatrix::<f64>::identity(4, 4) * 0.1;
        let sigma2 = 0.37;
        let direct = direct_gain(&b.u, &p, sigma2).unwrap();
        let wood = woodbury_gain(&b.u, &p, sigma2).unwrap();
        let reduced = reduced_gain(&p, sigma2).unwrap() * b.u.transpose();
        let scale = direct.amax();
        assert!((&wood - &direct).amax() / scale < 1e-9);
        assert!((&reduced - &direct).amax() / scale < 1e-9);
    }

    #[test]
    fn joseph_form_keeps_covariance_valid() {
        let x = gaussian(15, 150, 21);
        let (d, dm) = ewm_demean(&x, 12.0).unwrap();
        let b = exact_dmd(&d, 5, 0.99).unwrap();
        let run = kalman_run(&b, &dm, &x, TransitionMode::Full, &KalmanParams::default()).unwrap();
        assert_eq!(run.p_min_eig.len(), 150);
        assert!(run.p_min_eig.iter().all(|&e| e >= -1e-10));
        assert!(run.p_asymmetry.iter().all(|&a| a < 1e-12));
        assert!(run.state.q.diagonal().iter().all(|&v| v >= 1e-6));
    }

    #[test]
    fn noiseless_limit_reproduces_projection() {
        let n = 6;
        let m = gaussian(n, n, 8);
        let m = &m * (0.9 / spectral_radius(&m));
        let mut x = DMatrix::zeros(n, 40);
        x.set_column(0, &gaussian(n, 1, 9).column(0));
        for t in 1..40 {
            let next = &m * x.column(t - 1);
            x.set_column(t, &next);
        }
        let (d, dm) = ewm_demean(&x, 12.0).unwrap();
        let b = exact_dmd(&d, n, 0.99).unwrap();
        assert_eq!(b.clip_factor, 1.0);
        let run = kalman_run_with_noise(&b, &dm, &x, TransitionMode::Full, &KalmanParams::default(), 0.0).unwrap();
        let op = &b.u * &b.a_reduced * b.u.transpose();
        for t in 0..39 {
            let oracle = &op * d.column(t) + &dm.mean;
            assert!((run.forecasts.column(t + 1) - oracle).amax() < 1e-6, "quarter {t}");
        }
        let z = b.u.transpose() * d.column(39);
        assert!((&run.state.alpha - z).amax() < 1e-9);
    }

    #[test]
    fn stepping_matches_batch_run() {
        let x = gaussian(8, 25, 30);
        let (d, dm) = ewm_demean(&x, 12.0).unwrap();
        let b = exact_dmd(&d, 3, 0.99).unwrap();
        let params = KalmanParams::default();
        let run = kalman_run(&b, &dm, &x, TransitionMode::Diag, &params).unwrap();
        let mut f = ModalFilter::new(&b, &dm, TransitionMode::Diag, &params, run.state.sigma2_perp);
        for t in 0..25 {
            f.step(&x.column(t).into_owned(), t).unwrap();
        }
        assert_eq!(f.predict(), run.next);
    }
}
