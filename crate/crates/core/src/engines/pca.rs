use nalgebra::{DMatrix, DVector};

use super::basis::{fix_signs, sorted_svd, SubspaceBasis};
use crate::error::{Error, Result};

/// Top-K eigenvectors of the weighted covariance `Σ_t w_t r̃_t r̃_tᵀ`.
///
/// The propagator is the identity until a transition model is fitted.
pub fn fit_pca_basis(demeaned: &DMatrix<f64>, k: usize, weights: &DVector<f64>) -> Result<SubspaceBasis> {
    let (n, t) = demeaned.shape();
    if weights.len() != t {
        return Err(Error::Alignment { expected: t, got: weights.len() });
    }
    let max = n.min(t.saturating_sub(1));
    if k == 0 || k > max {
        return Err(Error::RankOverflow { k, max });
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Precondition("PCA weights must be non-negative".into()));
    }
    // Left singular vectors of r̃·diag(√w) are the covariance eigenvectors.
    let mut scaled = demeaned.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= weights[j].sqrt();
    }
    let (u, _, _) = sorted_svd(&scaled);
    let mut u = u.columns(0, k).into_owned();
    fix_signs(&mut u);
    Ok(SubspaceBasis::new(u, DMatrix::identity(k, k), 1.0))
}

/// Factor series `f_t = Uᵀ r̃_t` for every column.
pub fn project(basis: &SubspaceBasis, demeaned: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if demeaned.nrows() != basis.n() {
        return Err(Error::Alignment { expected: basis.n(), got: demeaned.nrows() });
    }
    Ok(basis.u.transpose() * demeaned)
}

#[cfg(test)]
mod tests {
    use super::super::basis::orthonormality_error;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn planted_rank_one() {
        let v = DVector::from_fn(8, |i, _| (i as f64 + 1.0).sin());
        let s = gaussian(1, 30, 3);
        let r = &v * s.row(0);
        let w = DVector::from_element(30, 1.0 / 30.0);
        let b = fit_pca_basis(&r, 1, &w).unwrap();
        let cos = (b.u.column(0).dot(&v) / v.norm()).abs();
        assert!(cos >= 1.0 - 1e-10, "cos = {cos}");
    }

    #[test]
    fn orthonormal_on_noise() {
        let r = gaussian(10, 40, 9);
        let w = DVector::from_element(40, 1.0 / 40.0);
        let b = fit_pca_basis(&r, 2, &w).unwrap();
        assert!(orthonormality_error(&b.u) < 1e-10);
    }

    #[test]
    fn equal_weights_match_covariance_eigenvectors() {
        let r = gaussian(6, 25, 17);
        let w = DVector::from_element(25, 1.0 / 25.0);
        let b = fit_pca_basis(&r, 3, &w).unwrap();
        let cov = &r * r.transpose() / 25.0;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        for (k, &idx) in order.iter().take(3).enumerate() {
            let mut e = eig.eigenvectors.column(idx).into_owned();
            let pivot = e.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                e.neg_mut();
            }
            assert!((b.u.column(k) - e).amax() < 1e-9);
        }
    }

    #[test]
    fn rank_overflow() {
        let r = gaussian(4, 3, 1);
        let w = DVector::from_element(3, 1.0 / 3.0);
        assert!(matches!(fit_pca_basis(&r, 3, &w).unwrap_err(), Error::RankOverflow { k: 3, max: 2 }));
    }
}
