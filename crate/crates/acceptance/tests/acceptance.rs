//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its runtime against the budget; the process fails if any does.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use blockmix::engines::{
    direct_gain, eigenvalues, ewm_demean, exact_dmd, kalman_run, kalman_run_with_noise, spectral_radius_clip,
    woodbury_gain, EwmDemeaner, KalmanParams, SubspaceBasis, TransitionMode,
};
use blockmix::evaluation::{
    hln_factor, holm_bonferroni, n_eff_from_rho, paired_bootstrap_ci, rolling_oos_evaluate, sign_test,
    R2Convention, WindowResult,
};
use blockmix::exec::{map_indexed, task_rng};
use blockmix::geometry::{geodesic_distance, principal_angles, random_basis};
use blockmix::mixture::{fit_architecture, ArchitectureKind, ArchitectureSpec};
use blockmix::panel::{minmax_normalize, percentile_rank_transform, MinMaxMode, Panel, ResolvedBlock};
use blockmix::validation::{permute_blocks, placebo_test, DeltaHarness, PlaceboOptions};
use blockmix::Execution;
use blockmix_suite::*;

type Outcome = blockmix::Result<(bool, String)>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn forecasts(panel: &Panel, kind: ArchitectureKind, blocks: Option<&blockmix::panel::BlockPartition>, train: usize) -> blockmix::Result<Vec<WindowResult>> {
    rolling_oos_evaluate(panel, &ArchitectureSpec::new(kind), blocks, &calendar(train), Execution::Parallel)
}

fn g0_recovery() -> Outcome {
    let (panel, part) = small(PLANTED_SEED)?;
    let g0 = forecasts(&panel, ArchitectureKind::G0, None, 5)?;
    let spec = ArchitectureSpec { zero_stage2: true, ..ArchitectureSpec::new(ArchitectureKind::M2) };
    let m2 = rolling_oos_evaluate(&panel, &spec, Some(&part), &calendar(5), Execution::Parallel)?;
    let cells: usize = g0.iter().map(|w| w.forecasts.len()).sum();
    let exact = g0.iter().zip(&m2).all(|(a, b)| a.forecasts == b.forecasts);
    let worst = g0.iter().zip(&m2).map(|(a, b)| max_abs_diff(&a.forecasts, &b.forecasts)).fold(0.0, f64::max);
    Ok((exact, format!("{cells} forecasts, max |M2₀ − G0| = {worst:.1e}")))
}

fn ens_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut cells = 0;
    for (panel, part) in [small(PLANTED_SEED)?, planted(PLANTED_SEED)?] {
        let ens = forecasts(&panel, ArchitectureKind::Ens, Some(&part), 5)?;
        let g1 = forecasts(&panel, ArchitectureKind::G1, Some(&part), 5)?;
        let ba = forecasts(&panel, ArchitectureKind::Ba, Some(&part), 5)?;
        for ((e, g), b) in ens.iter().zip(&g1).zip(&ba) {
            let mean = (&g.forecasts + &b.forecasts) * 0.5;
            worst = worst.max(max_abs_diff(&e.forecasts, &mean));
            cells += e.forecasts.len();
        }
    }
    Ok((worst <= 1e-12, format!("{cells} forecasts on 20- and 93-actor panels, max deviation {worst:.1e}")))
}

fn sorted_spectrum(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

/// Rank-4 propagator with eigenvalues 0.9·e^{±0.4i}, 0.8 and 0.6 in a
/// random orthonormal frame.
fn planted_propagator<R: Rng>(rng: &mut R) -> (DMatrix<f64>, Vec<(f64, f64)>) {
    let (r, w) = (0.9f64, 0.4f64);
    let mut b = DMatrix::zeros(4, 4);
    b[(0, 0)] = r * w.cos();
    b[(0, 1)] = -r * w.sin();
    b[(1, 0)] = r * w.sin();
    b[(1, 1)] = r * w.cos();
    b[(2, 2)] = 0.8;
    b[(3, 3)] = 0.6;
    let q = random_basis(4, 4, rng);
    let spectrum = vec![(r * w.cos(), r * w.sin()), (r * w.cos(), -r * w.sin()), (0.8, 0.0), (0.6, 0.0)];
    (&q * b * q.transpose(), sorted_spectrum(spectrum))
}

fn dmd_oracle() -> Outcome {
    let mut rng = task_rng(PLANTED_SEED, 3);
    let (a, truth) = planted_propagator(&mut rng);
    let u = random_basis(30, 4, &mut rng);
    let mut z = DVector::from_fn(4, |_, _| normal(&mut rng));
    let mut x = DMatrix::zeros(30, 60);
    for t in 0..60 {
        x.set_column(t, &(&u * &z));
        z = &a * z;
    }
    let basis = exact_dmd(&x, 4, 0.99)?;
    let got = sorted_spectrum(basis.eigvals.clone());
    let err = got.iter().zip(&truth).map(|(g, t)| (g.0 - t.0).hypot(g.1 - t.1)).fold(0.0, f64::max);

    let (clipped, factor) = spectral_radius_clip(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.05, 0.90])), 0.99);
    let second = eigenvalues(&clipped).iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    let clip_ok = (second - 0.8486).abs() < 5e-5;
    Ok((
        err <= 1e-8 && clip_ok,
        format!("eigenvalue error {err:.1e}; clip factor {factor:.6}, 0.90 → {second:.4}"),
    ))
}

fn kalman_correctness() -> Outcome {
    let mut rng = task_rng(PLANTED_SEED, 4);
    let (a, _) = planted_propagator(&mut rng);
    let u = random_basis(30, 4, &mut rng);
    let mut z = DVector::from_fn(4, |_, _| normal(&mut rng));
    let mut r = DMatrix::zeros(30, 140);
    for t in 0..140 {
        let noise = DVector::from_fn(30, |_, _| 0.3 * normal(&mut rng));
        r.set_column(t, &(&u * &z + noise));
        z = &a * z + DVector::from_fn(4, |_, _| normal(&mut rng));
    }
    let train = r.columns(0, 40).into_owned();
    let test = r.columns(40, 100).into_owned();
    let (demeaned, demeaner) = ewm_demean(&train, 12.0)?;
    let basis = exact_dmd(&demeaned, 4, 0.99)?;
    let run = kalman_run(&basis, &demeaner, &test, TransitionMode::Full, &KalmanParams::default())?;
    let asym = run.p_asymmetry.iter().copied().fold(0.0, f64::max);
    let min_eig = run.p_min_eig.iter().copied().fold(f64::INFINITY, f64::min);
    let joseph_ok = run.p_min_eig.len() == 100 && asym <= 1e-12 && min_eig >= -1e-10;

    let u12 = random_basis(12, 3, &mut rng);
    let m = normal_matrix(&mut rng, 3, 3);
    let p = &m * m.transpose() + DMatrix::identity(3, 3) * 0.1;
    let gain_err = max_abs_diff(&woodbury_gain(&u12, &p, 0.25)?, &direct_gain(&u12, &p, 0.25)?);

    let planted = SubspaceBasis::new(u.clone(), a.clone(), 1.0);
    let zero_mean = EwmDemeaner { half_life: 12.0, weights: DVector::from_element(1, 1.0), mean: DVector::zeros(30) };
    let mut limit_err = 0.0f64;
    for sigma2 in [1e-10, 0.0] {
        let run = kalman_run_with_noise(&planted, &zero_mean, &test, TransitionMode::Full, &KalmanParams::default(), sigma2)?;
        let propagate = &u * &a * u.transpose();
        for s in 1..test.ncols() {
            let expected = &propagate * test.column(s - 1);
            limit_err = limit_err.max((run.forecasts.column(s) - expected).amax());
        }
        limit_err = limit_err.max((&run.next - &propagate * test.column(test.ncols() - 1)).amax());
    }
    Ok((
        joseph_ok && gain_err <= 1e-9 && limit_err <= 1e-6,
        format!(
            "P asymmetry {asym:.1e}, min eig {min_eig:.2e} over 100 steps; Woodbury gap {gain_err:.1e}; noiseless gap {limit_err:.1e}"
        ),
    ))
}

fn inference_golden() -> Outcome {
    let hln = hln_factor(10, 1);
    let sign = sign_test(10, 10)?;
    let n_eff = n_eff_from_rho(10, 0.11);
    // Seven tests: the smallest p is rejected at 0.05/7 and not just above it.
    let threshold = 0.05 / 7.0;
    let at = holm_bonferroni(&[threshold, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.05)?;
    let above = holm_bonferroni(&[threshold * 1.001, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 0.05)?;
    let ok = (hln - 0.9f64.sqrt()).abs() <= 1e-12
        && (sign - 2f64.powi(-10)).abs() <= 1e-15
        && (n_eff - 8.0).abs() <= 0.1
        && (threshold - 0.00714).abs() < 5e-6
        && at[0]
        && !above[0];
    Ok((ok, format!("HLN {hln:.12}, sign {sign:.3e}, n_eff {n_eff:.3}, Holm first threshold {threshold:.5}")))
}

const COVERAGE_SEED: u64 = 20_240_101;

fn bootstrap_coverage() -> Outcome {
    let covered = map_indexed(Execution::Parallel, 1000, |i| {
        let mut rng = task_rng(COVERAGE_SEED, i as u64);
        let x: Vec<f64> = (0..30).map(|_| normal(&mut rng)).collect();
        let seed: u64 = rng.random();
        paired_bootstrap_ci(&x, 10_000, 0.95, seed, Execution::Sequential).map(|ci| ci.lo <= 0.0 && 0.0 <= ci.hi)
    })
    .into_iter()
    .collect::<blockmix::Result<Vec<bool>>>()?;
    let rate = covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
    Ok(((0.93..=0.97).contains(&rate), format!("coverage {:.1}% over 1000 datasets of n=30, 10000 resamples", rate * 100.0)))
}

fn harness<'a>(panel: &'a Panel, train: usize) -> blockmix::Result<DeltaHarness<'a>> {
    DeltaHarness::new(
        panel,
        &calendar(train),
        &ArchitectureSpec::new(ArchitectureKind::M2),
        &ArchitectureSpec::new(ArchitectureKind::G1),
        R2Convention::TestMean,
        Execution::Parallel,
    )
}

fn scope_condition() -> Outcome {
    let opts = PlaceboOptions { n_perms: PLACEBO_PERMS, seed: PLACEBO_SEED, fixed_actors: None };

    let (panel, part) = planted(PLANTED_SEED)?;
    let h = harness(&panel, 5)?;
    let real = h.deltas(&part.resolve(&panel)?, Execution::Parallel)?;
    let placebo = placebo_test(&h, &part, &opts, Execution::Parallel)?;
    let z = placebo.z.unwrap_or(f64::NAN);
    let planted_ok = real.delta > 0.0 && real.wins >= 8 && real.windows() == 10 && z > 3.0;

    let (null, null_part) = null_panel(PLANTED_SEED)?;
    let hn = harness(&null, 5)?;
    let np = placebo_test(&hn, &null_part, &opts, Execution::Parallel)?;
    let nz = np.z.unwrap_or(0.0);
    let null_ok = np.real_delta <= np.band95.1 && nz.abs() < 3.0;

    Ok((
        planted_ok && null_ok,
        format!(
            "planted Δ {:+.4}, wins {}/{}, z {z:.2}; null Δ {:+.4} vs band ({:+.4}, {:+.4}), z {nz:.2}",
            real.delta,
            real.wins,
            real.windows(),
            np.real_delta,
            np.band95.0,
            np.band95.1
        ),
    ))
}

const ALL_KINDS: [ArchitectureKind; 10] = [
    ArchitectureKind::G0,
    ArchitectureKind::Ba,
    ArchitectureKind::G1,
    ArchitectureKind::Ens,
    ArchitectureKind::S1,
    ArchitectureKind::BaM2,
    ArchitectureKind::M1,
    ArchitectureKind::M2,
    ArchitectureKind::Ar1,
    ArchitectureKind::Ssr,
];

fn causality() -> Outcome {
    let (panel, part) = planted(PLANTED_SEED)?;
    let mut rng = task_rng(PLANTED_SEED, 8);
    let future = normal_matrix(&mut rng, panel.n_actors(), 12) * 50.0;
    let extended = panel.append_quarters(&future)?;
    let cal = calendar(5);
    let mut forecasts_equal = true;
    let mut fits_equal = true;
    let mut n_fits = 0;
    let blocks = part.resolve(&panel)?;
    for kind in ALL_KINDS {
        let spec = ArchitectureSpec::new(kind);
        let partition = kind.needs_partition().then_some(&part);
        let a = rolling_oos_evaluate(&panel, &spec, partition, &cal, Execution::Parallel)?;
        let b = rolling_oos_evaluate(&extended, &spec, partition, &cal, Execution::Parallel)?;
        forecasts_equal &= a.iter().zip(&b).all(|(x, y)| x.forecasts == y.forecasts && x.actuals == y.actuals);
        let routed: &[ResolvedBlock] = if kind.needs_partition() { &blocks } else { &[] };
        for origin in [43usize, 59, 83] {
            let start = origin + 1 - 20;
            let fa = fit_architecture(&spec, &panel.values().columns(start, 20).into_owned(), routed)?;
            let fb = fit_architecture(&spec, &extended.values().columns(start, 20).into_owned(), routed)?;
            fits_equal &= fa == fb;
            n_fits += 1;
        }
    }
    let t = panel.n_quarters();
    let rec_a = minmax_normalize(&panel, MinMaxMode::Recursive)?;
    let rec_b = minmax_normalize(&extended, MinMaxMode::Recursive)?;
    let norm_equal = rec_a.values() == &rec_b.values().columns(0, t).into_owned();
    let rank_a = percentile_rank_transform(&panel)?;
    let rank_b = percentile_rank_transform(&extended)?;
    let ranks_equal = rank_a.values() == &rank_b.values().columns(0, t).into_owned();
    Ok((
        forecasts_equal && fits_equal && norm_equal && ranks_equal,
        format!(
            "12 appended quarters: forecasts {}, {n_fits} fits {}, recursive min-max {}, ranks {}",
            same(forecasts_equal),
            same(fits_equal),
            same(norm_equal),
            same(ranks_equal)
        ),
    ))
}

fn same(ok: bool) -> &'static str {
    if ok {
        "unchanged"
    } else {
        "CHANGED"
    }
}

fn size_multiset(blocks: &[ResolvedBlock]) -> Vec<(usize, bool)> {
    let mut s: Vec<(usize, bool)> = blocks.iter().map(|b| (b.rows.len(), b.local)).collect();
    s.sort_unstable();
    s
}

fn placebo_mechanics() -> Outcome {
    let (panel, part) = planted(PLANTED_SEED)?;
    let template = part.resolve(&panel)?;
    let mut sizes: Vec<usize> = template.iter().map(|b| b.rows.len()).collect();
    sizes.sort_unstable();
    let template_ok = sizes == [11, 23, 25, 34];

    let b2 = template.iter().find(|b| b.id == "b2").expect("planted block b2");
    let mut fixed = vec![false; panel.n_actors()];
    b2.rows.iter().for_each(|&r| fixed[r] = true);
    let free = vec![false; panel.n_actors()];
    let want = size_multiset(&template);
    let mut sizes_ok = true;
    let mut fixed_ok = true;
    for k in 0..PLACEBO_PERMS as u64 {
        let open = permute_blocks(&template, &free, &mut task_rng(PLACEBO_SEED, k));
        let strat = permute_blocks(&template, &fixed, &mut task_rng(PLACEBO_SEED, k));
        sizes_ok &= size_multiset(&open) == want && size_multiset(&strat) == want;
        sizes_ok &= [&open, &strat].iter().all(|p| {
            let mut rows: Vec<usize> = p.iter().flat_map(|b| b.rows.iter().copied()).collect();
            rows.sort_unstable();
            rows == (0..panel.n_actors()).collect::<Vec<_>>()
        });
        fixed_ok &= strat.iter().find(|b| b.id == "b2").is_some_and(|b| b.rows == b2.rows);
    }

    let h = harness(&panel, 5)?;
    let fixed_ids: BTreeSet<String> = b2.rows.iter().map(|&r| panel.registry()[r].actor_id.clone()).collect();
    let opts = PlaceboOptions { n_perms: PLACEBO_PERMS, seed: PLACEBO_SEED, fixed_actors: Some(fixed_ids) };
    let r = placebo_test(&h, &part, &opts, Execution::Parallel)?;
    let floor = 1.0 / (PLACEBO_PERMS as f64 + 1.0);
    let p_ok = r.p >= floor && r.perm_deltas.len() == PLACEBO_PERMS;
    Ok((
        template_ok && sizes_ok && fixed_ok && p_ok,
        format!(
            "template {sizes:?}; {PLACEBO_PERMS} perms keep sizes: {sizes_ok}, fixed block in place: {fixed_ok}; stratified p {:.4} ≥ {floor:.4}",
            r.p
        ),
    ))
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

fn geometry() -> Outcome {
    let mut rng = task_rng(PLANTED_SEED, 10);
    let u = random_basis(20, 3, &mut rng);
    let v = random_basis(20, 3, &mut rng);
    let identical = principal_angles(&u, &u)?.into_iter().fold(0.0, f64::max);

    let e = |i| DMatrix::from_columns(&[unit(5, i)]);
    let orthogonal = principal_angles(&e(0), &e(1))?[0];

    let q = random_basis(3, 3, &mut rng);
    let base = principal_angles(&u, &v)?;
    let rotated = principal_angles(&(&u * &q), &(&v * q.transpose()))?;
    let invariance = base.iter().zip(&rotated).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (t1, t2) = (45.8f64.to_radians(), 18f64.to_radians());
    let u1 = DMatrix::from_columns(&[unit(6, 0), unit(6, 1)]);
    let u2 = DMatrix::from_columns(&[unit(6, 0) * t1.cos() + unit(6, 2) * t1.sin(), unit(6, 1) * t2.cos() + unit(6, 3) * t2.sin()]);
    let angles = principal_angles(&u1, &u2)?;
    let total = geodesic_distance(&angles);
    let share = angles[1] / total;
    let pair_ok = (angles[0] - 18.0).abs() < 1e-9 && (angles[1] - 45.8).abs() < 1e-9 && (share - 0.93).abs() < 0.005;

    Ok((
        identical <= 1e-9 && (orthogonal - 90.0).abs() <= 1e-9 && invariance <= 1e-9 && pair_ok,
        format!(
            "identical {identical:.1e}°, orthogonal {orthogonal:.6}°, rotation drift {invariance:.1e}°, (45.8°, 18°) → {total:.2}°, share {share:.4}"
        ),
    ))
}

fn short_window_amplification() -> Outcome {
    let mut sums = [0.0f64; 2];
    let seeds: Vec<u64> = ENSEMBLE_SEEDS.collect();
    for &seed in &seeds {
        let (panel, part) = planted(seed)?;
        let blocks = part.resolve(&panel)?;
        for (slot, train) in [2usize, 5].into_iter().enumerate() {
            sums[slot] += harness(&panel, train)?.deltas(&blocks, Execution::Parallel)?.delta;
        }
    }
    let n = seeds.len() as f64;
    let (short, long) = (sums[0] / n, sums[1] / n);
    Ok((short > long, format!("mean Δ over {} seeds: T=2y {short:+.4}, T=5y {long:+.4}", seeds.len())))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "G0 recovery", budget: Duration::from_secs(5), run: g0_recovery },
        Criterion { id: 2, name: "ENS identity", budget: Duration::from_secs(5), run: ens_identity },
        Criterion { id: 3, name: "DMD oracle", budget: Duration::from_secs(5), run: dmd_oracle },
        Criterion { id: 4, name: "Kalman correctness", budget: Duration::from_secs(10), run: kalman_correctness },
        Criterion { id: 5, name: "inference golden values", budget: Duration::from_secs(1), run: inference_golden },
        Criterion { id: 6, name: "bootstrap coverage", budget: Duration::from_secs(60), run: bootstrap_coverage },
        Criterion { id: 7, name: "scope condition", budget: Duration::from_secs(600), run: scope_condition },
        Criterion { id: 8, name: "causality", budget: Duration::from_secs(30), run: causality },
        Criterion { id: 9, name: "placebo mechanics", budget: Duration::from_secs(120), run: placebo_mechanics },
        Criterion { id: 10, name: "geometry", budget: Duration::from_secs(5), run: geometry },
        Criterion { id: 11, name: "short-window amplification", budget: Duration::from_secs(900), run: short_window_amplification },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(Ok((ok, detail))) => (ok, detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_budget = elapsed <= c.budget;
        let pass = ok && in_budget;
        println!(
            "criterion {:>2} {:<27} {}  [{:.2}s / {}s{}]  {detail}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_budget { "" } else { ", over budget" }
        );
        ran += 1;
        if !pass {
            failed.push(c.id);
        }
    }
    println!("acceptance: {}/{ran} passed", ran - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
