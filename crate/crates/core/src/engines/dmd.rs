use nalgebra::DMatrix;

use super::basis::{fix_signs, sorted_svd, spectral_radius, SubspaceBasis};
use crate::error::{Error, Result};

/// Default cap on the spectral radius of any propagator.
pub const SPECTRAL_CAP: f64 = 0.99;

const SINGULAR_FLOOR: f64 = 1e-12;

/// Scales `a` uniformly so that its spectral radius is at most `cap`.
/// Returns the scaled matrix and the factor applied.
pub fn spectral_radius_clip(a: &DMatrix<f64>, cap: f64) -> (DMatrix<f64>, f64) {
    let radius = spectral_radius(a);
    let factor = if radius > cap { cap / radius } else { 1.0 };
    (a * factor, factor)
}

/// Exact DMD on consecutive snapshots of `demeaned`, truncated to rank `k`,
/// with the reduced propagator clipped to spectral radius `cap`.
pub fn exact_dmd(demeaned: &DMatrix<f64>, k: usize, cap: f64) -> Result<SubspaceBasis> {
    let (n, t) = demeaned.shape();
    if t < k + 1 || t < 2 {
        return Err(Error::Precondition(format!("DMD at rank {k} needs at least {} quarters, got {t}", k + 1)));
    }
    let max = n.min(t - 1);
    if k == 0 || k > max {
        return Err(Error::RankOverflow { k, max });
    }
    let x = demeaned.columns(0, t - 1).into_owned();
    let y = demeaned.columns(1, t - 1).into_owned();
    let (u, s, v) = sorted_svd(&x);
    if s[k - 1] < SINGULAR_FLOOR {
        return Err(Error::RankDeficient(format!(
            "singular value {} of the snapshot matrix is {:.3e}",
            k,
            s[k - 1]
        )));
    }
    let mut u_r = u.columns(0, k).into_owned();
    let mut v_r = v.columns(0, k).into_owned();
    // Flip U and V together so the factorization is unchanged.
    for (j, flipped) in fix_signs(&mut u_r).into_iter().enumerate() {
        if flipped {
            v_r.column_mut(j).neg_mut();
        }
    }
    let sigma_inv = DMatrix::from_diagonal(&s.rows(0, k).map(|x| 1.0 / x));
    let a_tilde = u_r.transpose() * &y * &v_r * sigma_inv;
    let (a_clipped, factor) = spectral_radius_clip(&a_tilde, cap);
    Ok(SubspaceBasis::new(u_r, a_clipped, factor))
}

/// Numerical rank of the snapshot matrix, capped at `k`.
pub fn snapshot_rank(demeaned: &DMatrix<f64>, k: usize) -> usize {
    let t = demeaned.ncols();
    if t < 2 {
        return 0;
    }
    let x = demeaned.columns(0, t - 1).into_owned();
    let s = x.singular_values();
    s.iter().filter(|&&v| v >= SINGULAR_FLOOR).count().min(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clip_compresses_modes_uniformly() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.05, 0.90, 0.3]));
        let (c, f) = spectral_radius_clip(&a, SPECTRAL_CAP);
        assert_relative_eq!(f, 0.99 / 1.05, epsilon = 1e-15);
        assert_relative_eq!(c[(1, 1)], 0.90 * 0.99 / 1.05, epsilon = 1e-14);
        assert!((c[(1, 1)] - 0.8486).abs() < 5e-5);
    }

    #[test]
    fn clip_inactive_below_cap() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.2]);
        let (c, f) = spectral_radius_clip(&a, SPECTRAL_CAP);
        assert_eq!(c, a);
        assert_eq!(f, 1.0);
        let (i, _) = spectral_radius_clip(&DMatrix::identity(3, 3), 0.99);
        assert_relative_eq!(i, DMatrix::identity(3, 3) * 0.99, epsilon = 1e-15);
    }

    #[test]
    fn single_pair_scalar_ratio() {
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 1.5, 0.25]);
        let b = exact_dmd(&m, 1, 10.0).unwrap();
        let x = m.column(0);
        let y = m.column(1);
        // Ã = uᵀ y v / σ with u = x/|x|, σ = |x|, v = ±1 matching u's sign.
        let expected = x.dot(&y) / x.dot(&x);
        assert_relative_eq!(b.a_reduced[(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_input_rank_deficient() {
        let z = DMatrix::zeros(5, 8);
        assert!(matches!(exact_dmd(&z, 2, 0.99).unwrap_err(), Error::RankDeficient(_)));
    }
}
