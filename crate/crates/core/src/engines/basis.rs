use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormal N×K basis with its K×K one-step propagator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    pub u: DMatrix<f64>,
    pub a_reduced: DMatrix<f64>,
    /// Eigenvalues of the stored `a_reduced`, as `(re, im)` pairs.
    pub eigvals: Vec<(f64, f64)>,
    /// Scalar applied by spectral-radius clipping (1 when inactive).
    pub clip_factor: f64,
}

impl SubspaceBasis {
    pub fn new(u: DMatrix<f64>, a_reduced: DMatrix<f64>, clip_factor: f64) -> Self {
        let eigvals = eigenvalues(&a_reduced).into_iter().map(|c| (c.re, c.im)).collect();
        Self { u, a_reduced, eigvals, clip_factor }
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn with_propagator(mut self, a: DMatrix<f64>) -> Self {
        self.eigvals = eigenvalues(&a).into_iter().map(|c| (c.re, c.im)).collect();
        self.a_reduced = a;
        self
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigvals.iter().map(|&(re, im)| re.hypot(im)).fold(0.0, f64::max)
    }
}

/// Complex eigenvalues of a square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Largest deviation of `UᵀU` from the identity.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let g = u.transpose() * u;
    let k = g.nrows();
    (&g - DMatrix::<f64>::identity(k, k)).amax()
}

pub fn check_orthonormal(u: &DMatrix<f64>, tol: f64) -> Result<()> {
    let dev = orthonormality_error(u);
    if dev > tol || !dev.is_finite() {
        return Err(Error::NonOrthonormal(dev));
    }
    Ok(())
}

/// Flips each column so that its largest-magnitude entry is positive and
/// reports which columns were flipped.
pub fn fix_signs(u: &mut DMatrix<f64>) -> Vec<bool> {
    u.column_iter_mut()
        .map(|mut col| {
            let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
            let flip = pivot < 0.0;
            if flip {
                col.neg_mut();
            }
            flip
        })
        .collect()
}

/// Thin SVD with singular triplets sorted by decreasing singular value.
pub(crate) fn sorted_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = u.select_columns(order.iter());
    let v = vt.transpose().select_columns(order.iter());
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
    (u, s, v)
}
