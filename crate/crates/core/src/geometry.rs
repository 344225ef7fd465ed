//! Principal angles, Grassmannian distances and random-subspace controls
//! for residual bases.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engines::{check_orthonormal, ewm_demean, fit_pca_basis};
use crate::error::{Error, Result};
use crate::evaluation::quantile_sorted;
use crate::exec::{map_indexed, task_rng, try_map_indexed, Execution};
use crate::stage1::fit_pooled_ar1_fe_or_fallback;

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Principal angles between `span(u1)` and `span(u2)` in degrees, ascending.
pub fn principal_angles(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u1.shape() != u2.shape() {
        return Err(Error::Alignment { expected: u1.ncols(), got: u2.ncols() });
    }
    check_orthonormal(u1, ORTHONORMAL_TOL)?;
    check_orthonormal(u2, ORTHONORMAL_TOL)?;
    let overlap = u1.transpose() * u2;
    let mut cosines: Vec<f64> = overlap.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|a, b| b.total_cmp(a));
    // acos loses half the digits near 0°, so small angles come from the
    // sines of the part of u2 outside span(u1).
    let mut sines: Vec<f64> = (u2 - u1 * &overlap).singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(f64::total_cmp);
    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c > std::f64::consts::FRAC_1_SQRT_2 { s.asin() } else { c.acos() }.to_degrees())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Norm used to collapse principal angles into one distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeodesicNorm {
    #[default]
    L2,
    L1,
    Max,
}

/// Arc-length distance: the ℓ2 norm of the angles.
pub fn geodesic_distance(angles: &[f64]) -> f64 {
    geodesic_distance_with(angles, GeodesicNorm::L2)
}

pub fn geodesic_distance_with(angles: &[f64], norm: GeodesicNorm) -> f64 {
    match norm {
        GeodesicNorm::L2 => angles.iter().map(|a| a * a).sum::<f64>().sqrt(),
        GeodesicNorm::L1 => angles.iter().map(|a| a.abs()).sum(),
        GeodesicNorm::Max => angles.iter().fold(0.0, |m, a| m.max(a.abs())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSeries {
    /// Geodesic distance between consecutive bases.
    pub steps: Vec<f64>,
    pub mean_step: f64,
    /// `None` when the steps have zero variance.
    pub acf1: Option<f64>,
    pub ljung_box_q: Option<f64>,
    pub ljung_box_p: Option<f64>,
}

/// Consecutive-basis geodesic steps with their lag-1 autocorrelation and
/// the lag-1 Ljung–Box test.
pub fn rotation_series(bases: &[DMatrix<f64>]) -> Result<RotationSeries> {
    if bases.len() < 3 {
        return Err(Error::Precondition(format!("rotation series needs at least 3 bases, got {}", bases.len())));
    }
    let steps = bases
        .windows(2)
        .map(|w| principal_angles(&w[0], &w[1]).map(|a| geodesic_distance(&a)))
        .collect::<Result<Vec<_>>>()?;
    let n = steps.len() as f64;
    let mean_step = steps.iter().sum::<f64>() / n;
    let g0: f64 = steps.iter().map(|s| (s - mean_step).powi(2)).sum::<f64>() / n;
    // Zero spread up to rounding in the angles counts as degenerate.
    let degenerate = g0.sqrt() <= 1e-9 * mean_step.abs().max(1e-6);
    let (acf1, q, p) = if degenerate {
        (None, None, None)
    } else {
        let g1: f64 = steps.windows(2).map(|w| (w[0] - mean_step) * (w[1] - mean_step)).sum::<f64>() / n;
        let r1 = g1 / g0;
        let q = n * (n + 2.0) * r1 * r1 / (n - 1.0);
        let p = ChiSquared::new(1.0).expect("one degree of freedom").sf(q);
        (Some(r1), Some(q), Some(p))
    };
    Ok(RotationSeries { steps, mean_step, acf1, ljung_box_q: q, ljung_box_p: p })
}

/// Haar-uniform orthonormal `n×k` basis (thin QR of a Gaussian matrix).
pub fn random_basis<R: rand::Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fixing sign(diag R) makes the distribution exactly Haar.
    let mut q = q.columns(0, k).into_owned();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub draws: usize,
    pub seed: u64,
}

/// Monte Carlo geodesic distance between independent uniform `K`-planes.
pub fn random_baseline(n: usize, k: usize, draws: usize, seed: u64, exec: Execution) -> Result<BaselineStats> {
    if k == 0 || k > n {
        return Err(Error::RankOverflow { k, max: n });
    }
    if draws == 0 {
        return Err(Error::Precondition("random baseline needs at least one draw".into()));
    }
    let mut d = try_map_indexed(exec, draws, |i| {
        let mut rng = task_rng(seed, i as u64);
        let a = random_basis(n, k, &mut rng);
        let b = random_basis(n, k, &mut rng);
        principal_angles(&a, &b).map(|x| geodesic_distance(&x))
    })?;
    let mean = d.iter().sum::<f64>() / draws as f64;
    d.sort_by(f64::total_cmp);
    Ok(BaselineStats {
        mean,
        q05: quantile_sorted(&d, 0.05),
        q50: quantile_sorted(&d, 0.5),
        q95: quantile_sorted(&d, 0.95),
        draws,
        seed,
    })
}

/// Stage-1 residual windows ending at each quarter, for rolling bases.
#[derive(Debug, Clone)]
pub struct ResidualWindows {
    /// `(end quarter index, N×(window−1) residuals)`.
    pub windows: Vec<(usize, DMatrix<f64>)>,
    pub half_life: f64,
}

impl ResidualWindows {
    /// Pooled Stage-1 residuals over each trailing window of `window`
    /// quarters, one per end quarter from `window − 1` to the last.
    pub fn new(values: &DMatrix<f64>, window: usize, half_life: f64) -> Result<Self> {
        let t = values.ncols();
        if window < 4 || window > t {
            return Err(Error::Precondition(format!("window {window} must be in 4..={t}")));
        }
        let windows = (window - 1..t)
            .map(|end| {
                let train = values.columns(end + 1 - window, window).into_owned();
                let fit = fit_pooled_ar1_fe_or_fallback(&train)?;
                Ok((end, fit.residuals(&train)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { windows, half_life })
    }

    /// EWM-weighted PCA basis of the given rows in every window.
    pub fn bases(&self, rows: &[usize], k: usize) -> Result<Vec<DMatrix<f64>>> {
        self.windows
            .iter()
            .map(|(_, r)| {
                let sub = r.select_rows(rows.iter());
                let (demeaned, ewm) = ewm_demean(&sub, self.half_life)?;
                Ok(fit_pca_basis(&demeaned, k, &ewm.weights)?.u)
            })
            .collect()
    }

    /// Mean consecutive geodesic step of the rows' bases.
    pub fn mean_rotation(&self, rows: &[usize], k: usize) -> Result<f64> {
        let bases = self.bases(rows, k)?;
        let steps = bases
            .windows(2)
            .map(|w| principal_angles(&w[0], &w[1]).map(|a| geodesic_distance(&a)))
            .collect::<Result<Vec<_>>>()?;
        if steps.is_empty() {
            return Err(Error::Precondition("need at least two windows".into()));
        }
        Ok(steps.iter().sum::<f64>() / steps.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedControl {
    pub block_size: usize,
    pub block_rotation: f64,
    pub draw_rotations: Vec<f64>,
    /// Fraction of random sub-panels rotating no more than the block.
    pub p: f64,
    pub seed: u64,
}

/// Compares a block's mean within-rotation against random sub-panels of
/// the same size. Draw `i` samples rows from stream `(seed, i)`.
pub fn matched_subpanel_control(
    residuals: &ResidualWindows,
    block_rows: &[usize],
    draws: usize,
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<MatchedControl> {
    let n = residuals.windows.first().map_or(0, |(_, r)| r.nrows());
    let size = block_rows.len();
    if size == 0 || size > n {
        return Err(Error::Precondition(format!("block size {size} must be in 1..={n}")));
    }
    if draws == 0 {
        return Err(Error::Precondition("matched control needs at least one draw".into()));
    }
    let mut rows = block_rows.to_vec();
    rows.sort_unstable();
    let block_rotation = residuals.mean_rotation(&rows, k)?;
    let draw_rows = map_indexed(Execution::Sequential, draws, |i| {
        let mut pick = sample(&mut task_rng(seed, i as u64), n, size).into_vec();
        pick.sort_unstable();
        pick
    });
    let draw_rotations = try_map_indexed(exec, draws, |i| residuals.mean_rotation(&draw_rows[i], k))?;
    // Tolerance absorbs rounding when a draw hits the block's own rows.
    let below = draw_rotations.iter().filter(|&&d| d <= block_rotation + 1e-9).count();
    Ok(MatchedControl { block_size: size, block_rotation, draw_rotations, p: below as f64 / draws as f64, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_heterogeneous_panel, BlockConfig, LayerConfig, SynthConfig};
    use crate::panel::Layer;
    use approx::assert_relative_eq;
    use nalgebra::Rotation2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identical_and_orthogonal() {
        let u = random_basis(10, 3, &mut rng(1));
        assert!(principal_angles(&u, &u).unwrap().iter().all(|a| a.abs() < 1e-6));
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_relative_eq!(principal_angles(&e1, &e2).unwrap()[0], 90.0, epsilon = 1e-12);
    }

    #[test]
    fn planted_rotation_in_plane() {
        // span{e1, e2} against span{cos φ e1 + sin φ e3, e2}.
        let phi: f64 = 30.0;
        let a = DMatrix::from_fn(5, 2, |i, j| (i == j) as u8 as f64);
        let mut b = DMatrix::zeros(5, 2);
        b[(0, 0)] = phi.to_radians().cos();
        b[(2, 0)] = phi.to_radians().sin();
        b[(1, 1)] = 1.0;
        let ang = principal_angles(&a, &b).unwrap();
        assert!(ang[0].abs() < 1e-6);
        assert_relative_eq!(ang[1], phi, epsilon = 1e-9);
        // A rotation within the plane itself leaves the subspace unchanged.
        let r = Rotation2::new(0.7).into_inner();
        let rotated = &a * DMatrix::from_column_slice(2, 2, r.as_slice());
        assert!(principal_angles(&a, &rotated).unwrap().iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn geodesic_values() {
        assert_eq!(geodesic_distance(&[]), 0.0);
        assert_relative_eq!(geodesic_distance(&[37.0]), 37.0);
        let total = geodesic_distance(&[45.8, 18.0]);
        assert!((total - 49.2).abs() < 0.05, "{total}");
        assert!((45.8 / total - 0.93).abs() < 0.005);
        assert_eq!(geodesic_distance_with(&[3.0, 4.0], GeodesicNorm::L1), 7.0);
        assert_eq!(geodesic_distance_with(&[3.0, 4.0], GeodesicNorm::Max), 4.0);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let a = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(principal_angles(&a, &a).unwrap_err(), Error::NonOrthonormal(_)));
    }

    #[test]
    fn baseline_closed_forms() {
        // A uniform line in the plane makes a uniform angle in [0°, 90°].
        let b = random_baseline(2, 1, 20_000, 3, Execution::Parallel).unwrap();
        assert!((b.mean - 45.0).abs() < 0.6, "{}", b.mean);
        let full = random_baseline(6, 6, 20, 3, Execution::Sequential).unwrap();
        assert!(full.mean.abs() < 1e-5 && full.q95 < 1e-5);
    }

    #[test]
    fn rotation_series_degenerate_cases() {
        let u = random_basis(8, 2, &mut rng(2));
        let s = rotation_series(&[u.clone(), u.clone(), u.clone(), u.clone()]).unwrap();
        assert!(s.steps.iter().all(|x| x.abs() < 1e-6));
        assert!(s.acf1.is_none());
        // Constant-speed rotation of a line in the plane.
        let line = |deg: f64| DMatrix::from_column_slice(2, 1, &[deg.to_radians().cos(), deg.to_radians().sin()]);
        let s = rotation_series(&(0..6).map(|k| line(10.0 * k as f64)).collect::<Vec<_>>()).unwrap();
        assert!(s.steps.iter().all(|x| (x - 10.0).abs() < 1e-9));
        assert!(s.acf1.is_none());
        assert!(rotation_series(&[u.clone(), u]).is_err());
    }

    #[test]
    fn iid_bases_rotate_like_the_baseline() {
        let bases: Vec<DMatrix<f64>> = (0..400).map(|i| random_basis(12, 3, &mut task_rng(8, i))).collect();
        let s = rotation_series(&bases).unwrap();
        let b = random_baseline(12, 3, 4000, 9, Execution::Parallel).unwrap();
        assert!((s.mean_step - b.mean).abs() < 1.5, "{} vs {}", s.mean_step, b.mean);
        assert!(s.ljung_box_p.unwrap() > 0.001);
    }

    #[test]
    fn angle_invariants_on_random_triples() {
        let mut r = rng(5);
        for _ in 0..20 {
            let (a, b, c) = (random_basis(9, 3, &mut r), random_basis(9, 3, &mut r), random_basis(9, 3, &mut r));
            let ab = principal_angles(&a, &b).unwrap();
            let ba = principal_angles(&b, &a).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
            let rot = random_basis(3, 3, &mut r);
            let rotated = principal_angles(&(&a * &rot), &b).unwrap();
            for (x, y) in ab.iter().zip(&rotated) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
            let d = |x: &DMatrix<f64>, y: &DMatrix<f64>| geodesic_distance(&principal_angles(x, y).unwrap());
            assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }

    fn coherent_panel(seed: u64, loading: f64) -> crate::panel::Panel {
        generate_heterogeneous_panel(&SynthConfig {
            seed,
            start: "2000Q1".into(),
            t: 48,
            burn_in: 20,
            fixed_effect_scale: 0.2,
            layers: vec![LayerConfig { layer: Layer::Firm, count: 40, rho: 0.5, noise: 0.5, rank_transform: false }],
            blocks: vec![BlockConfig { id: "b".into(), actors: (0, 10), factor_k: 2, factor_rho: 0.7, loading_scale: loading }],
            common: None,
        })
        .unwrap()
    }

    #[test]
    fn full_panel_control_is_trivial() {
        let p = coherent_panel(1, 0.0);
        let w = ResidualWindows::new(p.values(), 16, 12.0).unwrap();
        let all: Vec<usize> = (0..40).collect();
        let c = matched_subpanel_control(&w, &all, 5, 2, 1, Execution::Sequential).unwrap();
        assert_eq!(c.p, 1.0);
    }

    #[test]
    fn planted_block_rotates_less_than_random_subpanels() {
        let p = coherent_panel(2, 2.0);
        let w = ResidualWindows::new(p.values(), 16, 12.0).unwrap();
        let rows: Vec<usize> = (0..10).collect();
        let c = matched_subpanel_control(&w, &rows, 100, 2, 4, Execution::Parallel).unwrap();
        assert!(c.p < 0.05, "p = {}", c.p);
    }

    #[test]
    fn null_panel_control_is_calibrated() {
        let ps: Vec<f64> = (0..10)
            .map(|s| {
                let p = coherent_panel(100 + s, 0.0);
                let w = ResidualWindows::new(p.values(), 16, 12.0).unwrap();
                let rows: Vec<usize> = (0..10).collect();
                matched_subpanel_control(&w, &rows, 40, 2, s, Execution::Parallel).unwrap().p
            })
            .collect();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        assert!((0.3..=0.7).contains(&mean), "mean p {mean}");
    }
}
