use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, task_rng, Execution};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Autocovariance at `lag` with the `1/n` normalization.
pub fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (lag..n).map(|t| (x[t] - m) * (x[t - lag] - m)).sum::<f64>() / n as f64
}

/// Two-sided p-value of `t` under Student-t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.sf(t.abs())
}

/// Upper-tail p-value of `t` under Student-t.
pub fn t_upper_p(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").sf(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub mean: f64,
    pub t: f64,
    pub p: f64,
    pub hln_factor: f64,
    pub n: usize,
}

/// Harvey–Leybourne–Newbold factor `√((n + 1 − 2h + h(h−1)/n)/n)`.
pub fn hln_factor(n: usize, h: usize) -> f64 {
    let (n, h) = (n as f64, h as f64);
    ((n + 1.0 - 2.0 * h + h * (h - 1.0) / n) / n).sqrt()
}

/// Diebold–Mariano statistic on loss differentials with the HLN
/// correction; p from t(n−1), two-sided.
pub fn dm_test(deltas: &[f64], horizon: usize) -> Result<DmResult> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::DegenerateDm(format!("need at least 2 differentials, got {n}")));
    }
    if horizon == 0 || horizon >= n {
        return Err(Error::DegenerateDm(format!("horizon {horizon} invalid for n = {n}")));
    }
    let m = mean(deltas);
    let var = autocovariance(deltas, 0) + 2.0 * (1..horizon).map(|k| autocovariance(deltas, k)).sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::DegenerateDm("loss differentials have zero variance".into()));
    }
    let factor = hln_factor(n, horizon);
    let t = m / (var / n as f64).sqrt() * factor;
    Ok(DmResult { mean: m, t, p: t_two_sided_p(t, (n - 1) as f64), hln_factor: factor, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HacResult {
    pub bandwidth: usize,
    pub t: f64,
    /// Two-sided p from t(n−1).
    pub p: f64,
    pub variance: f64,
}

/// Newey–West long-run variance with Bartlett weights `1 − j/(bw+1)`.
pub fn nw_variance(deltas: &[f64], bandwidth: usize) -> f64 {
    let bw = bandwidth as f64;
    autocovariance(deltas, 0)
        + 2.0 * (1..=bandwidth).map(|j| (1.0 - j as f64 / (bw + 1.0)) * autocovariance(deltas, j)).sum::<f64>()
}

/// `t = mean / √(HAC variance / n)`.
pub fn nw_hac_t(deltas: &[f64], bandwidth: usize) -> Result<HacResult> {
    let n = deltas.len();
    if bandwidth >= n {
        return Err(Error::Precondition(format!("bandwidth {bandwidth} must be below n = {n}")));
    }
    let variance = nw_variance(deltas, bandwidth);
    if !(variance > 0.0) {
        return Err(Error::DegenerateDm(format!("HAC variance {variance} at bandwidth {bandwidth}")));
    }
    let t = mean(deltas) / (variance / n as f64).sqrt();
    Ok(HacResult { bandwidth, t, p: t_two_sided_p(t, (n - 1) as f64), variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    /// 1 for the paired bootstrap.
    pub block_len: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn percentile_ci(mut means: Vec<f64>, level: f64) -> (f64, f64) {
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail))
}

fn check_boot(n: usize, resamples: usize, level: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Precondition(format!("bootstrap needs at least 2 observations, got {n}")));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition("bootstrap needs resamples > 0 and level in (0, 1)".into()));
    }
    Ok(())
}

/// Percentile CI of the mean under i.i.d. resampling of windows.
pub fn paired_bootstrap_ci(deltas: &[f64], resamples: usize, level: f64, seed: u64, exec: Execution) -> Result<BootstrapCi> {
    moving_block_bootstrap_ci(deltas, 1, resamples, level, seed, exec)
}

/// Percentile CI of the mean under the moving-block bootstrap: blocks of
/// `block_len` consecutive values with uniform start, concatenated and
/// truncated to `n`. Resample `b` draws from stream `(seed, b)`.
pub fn moving_block_bootstrap_ci(
    deltas: &[f64],
    block_len: usize,
    resamples: usize,
    level: f64,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapCi> {
    let n = deltas.len();
    check_boot(n, resamples, level)?;
    if block_len == 0 || block_len > n {
        return Err(Error::Precondition(format!("block length {block_len} must be in 1..={n}")));
    }
    let starts = n - block_len + 1;
    let means = map_indexed(exec, resamples, |b| {
        let mut rng = task_rng(seed, b as u64);
        let mut total = 0.0;
        let mut filled = 0;
        while filled < n {
            let s = rng.random_range(0..starts);
            for k in 0..block_len.min(n - filled) {
                total += deltas[s + k];
            }
            filled += block_len;
        }
        total / n as f64
    });
    let (lo, hi) = percentile_ci(means, level);
    Ok(BootstrapCi { lo, hi, level, resamples, seed, block_len })
}

/// Exact one-sided binomial tail `P(X ≥ wins)` for `X ~ Bin(total, 1/2)`.
pub fn sign_test(wins: usize, total: usize) -> Result<f64> {
    if wins > total {
        return Err(Error::Precondition(format!("{wins} wins out of {total}")));
    }
    // Accumulate C(total, k) / 2^total in log space to stay finite for large totals.
    let ln_half = (0.5f64).ln() * total as f64;
    let mut ln_c = 0.0;
    let mut p = 0.0;
    for k in 0..=total {
        if k > 0 {
            ln_c += ((total - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            p += (ln_c + ln_half).exp();
        }
    }
    Ok(p.min(1.0))
}

/// Lag-1 autocorrelation; 0 for a constant series.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let g0 = autocovariance(x, 0);
    if g0 > 0.0 {
        autocovariance(x, 1) / g0
    } else {
        0.0
    }
}

pub fn n_eff_from_rho(n: usize, rho: f64) -> f64 {
    n as f64 * (1.0 - rho) / (1.0 + rho)
}

/// `n(1 − ρ̂)/(1 + ρ̂)` with ρ̂ the lag-1 autocorrelation.
pub fn effective_sample_size(deltas: &[f64]) -> Result<f64> {
    let n = deltas.len();
    if n < 3 {
        return Err(Error::Precondition(format!("effective sample size needs n ≥ 3, got {n}")));
    }
    if autocovariance(deltas, 0) <= 0.0 {
        return Ok(n as f64);
    }
    Ok(n_eff_from_rho(n, lag1_autocorrelation(deltas)))
}

/// Holm step-down at level `alpha`; `p ≤ α/(m−k+1)` rejects. Decisions
/// are returned in input order.
pub fn holm_bonferroni(pvals: &[f64], alpha: f64) -> Result<Vec<bool>> {
    let m = pvals.len();
    if m == 0 {
        return Err(Error::Precondition("no p-values".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut reject = vec![false; m];
    for (k, &i) in order.iter().enumerate() {
        if pvals[i] <= alpha / (m - k) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn hln_at_ten_windows() {
        assert_relative_eq!(hln_factor(10, 1), 0.9f64.sqrt(), epsilon = 1e-12);
        assert!((hln_factor(10, 1) - 0.949).abs() < 5e-4);
    }

    #[test]
    fn dm_degenerate_and_symmetric() {
        assert!(matches!(dm_test(&[0.3; 6], 1).unwrap_err(), Error::DegenerateDm(_)));
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = dm_test(&alt, 1).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dm_at_one_step_is_paired_t() {
        let d = [0.04, 0.05, 0.02, 0.07, 0.03, 0.05, 0.06, 0.01, 0.04, 0.05];
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let s2 = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let r = dm_test(&d, 1).unwrap();
        assert_relative_eq!(r.t, m / (s2 / n).sqrt(), epsilon = 1e-12);
        // Undoing the factor gives the classical statistic.
        let g0 = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        assert_relative_eq!(r.t / r.hln_factor, m / (g0 / n).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn hac_bandwidth_zero_is_plain_t() {
        let d = [0.1, -0.2, 0.3, 0.05, 0.0, 0.2];
        let h = nw_hac_t(&d, 0).unwrap();
        let m = d.iter().sum::<f64>() / 6.0;
        assert_relative_eq!(h.t, m / (autocovariance(&d, 0) / 6.0).sqrt(), epsilon = 1e-14);
        assert!(nw_hac_t(&d, 6).is_err());
    }

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + e;
                x + 0.01
            })
            .collect()
    }

    #[test]
    fn hac_close_to_plain_on_iid() {
        let d = ar1(0.0, 10_000, 1);
        let plain = nw_hac_t(&d, 0).unwrap().t;
        let hac = nw_hac_t(&d, 3).unwrap().t;
        assert!((hac / plain - 1.0).abs() < 0.02);
    }

    #[test]
    fn hac_variance_ratio_closed_form() {
        let d = ar1(0.5, 10_000, 2);
        let ratio = nw_variance(&d, 3) / nw_variance(&d, 0);
        let closed = 1.0 + 2.0 * (1..=3).map(|j| (1.0 - j as f64 / 4.0) * 0.5f64.powi(j)).sum::<f64>();
        assert_relative_eq!(closed, 2.0625, epsilon = 1e-15);
        assert!((ratio / closed - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn bootstrap_constant_and_symmetric() {
        let ci = paired_bootstrap_ci(&[0.25; 8], 500, 0.95, 1, Execution::Sequential).unwrap();
        assert!((ci.lo - 0.25).abs() < 1e-15 && (ci.hi - 0.25).abs() < 1e-15);
        let sym: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let ci = paired_bootstrap_ci(&sym, 2000, 0.95, 2, Execution::Sequential).unwrap();
        assert!(ci.lo < 0.0 && ci.hi > 0.0);
    }

    #[test]
    fn block_len_one_is_paired_bootstrap() {
        let d = ar1(0.3, 12, 5);
        let a = paired_bootstrap_ci(&d, 1000, 0.9, 7, Execution::Sequential).unwrap();
        let b = moving_block_bootstrap_ci(&d, 1, 1000, 0.9, 7, Execution::Sequential).unwrap();
        assert_eq!((a.lo, a.hi), (b.lo, b.hi));
    }

    #[test]
    fn full_length_block_collapses() {
        let d = ar1(0.3, 9, 6);
        let m = d.iter().sum::<f64>() / 9.0;
        let ci = moving_block_bootstrap_ci(&d, 9, 300, 0.95, 1, Execution::Sequential).unwrap();
        assert!((ci.lo - m).abs() < 1e-15 && (ci.hi - m).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_schedule_independent() {
        let d = ar1(0.0, 20, 8);
        let a = moving_block_bootstrap_ci(&d, 3, 2000, 0.95, 3, Execution::Sequential).unwrap();
        let b = moving_block_bootstrap_ci(&d, 3, 2000, 0.95, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paired_bootstrap_coverage() {
        let normal = rand_distr::Normal::new(0.3, 1.0).unwrap();
        let covered = map_indexed(Execution::Parallel, 1000, |k| {
            let mut rng = task_rng(2024, k as u64);
            let d: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
            let ci = paired_bootstrap_ci(&d, 1000, 0.95, k as u64, Execution::Sequential).unwrap();
            ci.lo <= 0.3 && 0.3 <= ci.hi
        })
        .into_iter()
        .filter(|&c| c)
        .count();
        // The percentile interval uses the 1/n spread and normal quantiles, so
        // its large-sample coverage is P(|t₂₉| < 1.96·√(29/30)), not 0.95.
        let t29 = StudentsT::new(0.0, 1.0, 29.0).unwrap();
        let expected = 1.0 - 2.0 * t29.sf(1.959964 * (29.0f64 / 30.0).sqrt());
        let rate = covered as f64 / 1000.0;
        assert!((rate - expected).abs() < 0.025, "coverage {rate} vs {expected}");
    }

    #[test]
    fn sign_test_values() {
        assert_relative_eq!(sign_test(10, 10).unwrap(), 2f64.powi(-10), epsilon = 1e-15);
        assert_relative_eq!(sign_test(8, 8).unwrap(), 2f64.powi(-8), epsilon = 1e-15);
        assert_relative_eq!(sign_test(5, 10).unwrap(), 638.0 / 1024.0, epsilon = 1e-12);
        assert_relative_eq!(sign_test(0, 7).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn effective_sample_size_values() {
        assert!((n_eff_from_rho(10, 0.11) - 8.0).abs() < 0.1);
        assert_eq!(n_eff_from_rho(10, 0.0), 10.0);
        assert!(n_eff_from_rho(10, 0.999999) < 1e-4);
        assert_eq!(effective_sample_size(&[1.0; 5]).unwrap(), 5.0);
    }

    #[test]
    fn holm_examples() {
        assert!(holm_bonferroni(&[0.001; 7], 0.05).unwrap().iter().all(|&r| r));
        assert!(0.001 < 0.05 / 7.0 && (0.05f64 / 7.0 - 0.00714).abs() < 1e-5);
        assert_eq!(holm_bonferroni(&[0.05], 0.05).unwrap(), vec![true]);
        assert_eq!(holm_bonferroni(&[0.04, 0.001, 0.04], 0.05).unwrap(), vec![false, true, false]);
    }
}
