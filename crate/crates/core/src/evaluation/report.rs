use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::inference::{
    dm_test, effective_sample_size, lag1_autocorrelation, moving_block_bootstrap_ci, nw_hac_t, paired_bootstrap_ci,
    sign_test, BootstrapCi, DmResult, HacResult,
};
use super::metrics::{mae, oos_r2, spearman_ic, window_mse, R2Convention};
use super::rolling::WindowResult;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Unit of the loss differential fed to the inference battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossBasis {
    /// One differential per window: `R²_a − R²_b`.
    #[default]
    WindowR2,
    /// One differential per test quarter: `MSE_b − MSE_a` over actors.
    QuarterlySquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub convention: R2Convention,
    pub loss_basis: LossBasis,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub horizon: usize,
    pub hac_bandwidths: [usize; 3],
    pub block_lengths: [usize; 2],
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            convention: R2Convention::TestMean,
            loss_basis: LossBasis::WindowR2,
            resamples: 10_000,
            level: 0.95,
            seed: 20_240_101,
            horizon: 1,
            hac_bandwidths: [1, 2, 3],
            block_lengths: [2, 3],
        }
    }
}

/// Inference summary for architecture `a` against baseline `b`.
/// Positive differentials favour `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub options: CompareOptions,
    pub mean_r2_a: f64,
    pub mean_r2_b: f64,
    pub deltas: Vec<f64>,
    pub delta_mean: f64,
    pub bootstrap_ci: BootstrapCi,
    /// `None` when the differentials have zero variance.
    pub dm: Option<DmResult>,
    pub hac: Vec<Option<HacResult>>,
    pub block_bootstrap: Vec<BootstrapCi>,
    pub sign_wins: usize,
    pub sign_total: usize,
    pub sign_p: f64,
    pub rho_d: f64,
    pub n_eff: Option<f64>,
    /// Sign-test p with the total deflated to `round(n_eff)`.
    pub sign_p_eff: Option<f64>,
}

fn differentials(a: &[WindowResult], b: &[WindowResult], opts: &CompareOptions) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Alignment { expected: a.len(), got: b.len() });
    }
    let mut out = Vec::new();
    for (wa, wb) in a.iter().zip(b) {
        if wa.test_year != wb.test_year || wa.actuals != wb.actuals {
            return Err(Error::Precondition(format!("window {} is not paired", wa.test_year)));
        }
        match opts.loss_basis {
            LossBasis::WindowR2 => out.push(oos_r2(wa, opts.convention)? - oos_r2(wb, opts.convention)?),
            LossBasis::QuarterlySquaredError => {
                for q in 0..wa.actuals.ncols() {
                    let se = |w: &WindowResult| (w.actuals.column(q) - w.forecasts.column(q)).norm_squared();
                    out.push((se(wb) - se(wa)) / wa.actuals.nrows() as f64);
                }
            }
        }
    }
    Ok(out)
}

fn mean_r2(results: &[WindowResult], convention: R2Convention) -> Result<f64> {
    super::metrics::mean_r2(results, convention)
}

/// Runs the full inference battery on paired window results.
pub fn compare(
    label_a: &str,
    a: &[WindowResult],
    label_b: &str,
    b: &[WindowResult],
    opts: &CompareOptions,
    exec: Execution,
) -> Result<ComparisonReport> {
    let deltas = differentials(a, b, opts)?;
    let n = deltas.len();
    if n < 2 {
        return Err(Error::Precondition(format!("comparison needs at least 2 differentials, got {n}")));
    }
    let delta_mean = deltas.iter().sum::<f64>() / n as f64;
    let bootstrap_ci = paired_bootstrap_ci(&deltas, opts.resamples, opts.level, opts.seed, exec)?;
    let dm = match dm_test(&deltas, opts.horizon) {
        Ok(r) => Some(r),
        Err(Error::DegenerateDm(msg)) => {
            log::warn!("{label_a} vs {label_b}: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let hac = opts
        .hac_bandwidths
        .iter()
        .map(|&bw| if bw < n { nw_hac_t(&deltas, bw).ok() } else { None })
        .collect();
    let block_bootstrap = opts
        .block_lengths
        .iter()
        .filter(|&&l| l <= n)
        .map(|&l| moving_block_bootstrap_ci(&deltas, l, opts.resamples, opts.level, opts.seed, exec))
        .collect::<Result<Vec<_>>>()?;
    let sign_wins = deltas.iter().filter(|&&d| d > 0.0).count();
    let sign_p = sign_test(sign_wins, n)?;
    let n_eff = (n >= 3).then(|| effective_sample_size(&deltas)).transpose()?;
    let sign_p_eff = n_eff.map(|ne| {
        let total = (ne.round() as usize).clamp(1, n);
        let wins = ((sign_wins as f64 * total as f64 / n as f64).round() as usize).min(total);
        sign_test(wins, total).expect("wins ≤ total")
    });
    Ok(ComparisonReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        options: *opts,
        mean_r2_a: mean_r2(a, opts.convention)?,
        mean_r2_b: mean_r2(b, opts.convention)?,
        rho_d: lag1_autocorrelation(&deltas),
        deltas,
        delta_mean,
        bootstrap_ci,
        dm,
        hac,
        block_bootstrap,
        sign_wins,
        sign_total: n,
        sign_p,
        n_eff,
        sign_p_eff,
    })
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.prec$}"))
}

/// Markdown table with one row per comparison: mean R², Δ vs baseline,
/// DM t and p, bootstrap CI and sign wins, then the robustness columns.
pub fn comparison_markdown(reports: &[ComparisonReport]) -> String {
    let mut s = String::new();
    let Some(first) = reports.first() else {
        return s;
    };
    let level = (first.options.level * 100.0).round();
    let _ = writeln!(
        s,
        "| Architecture | Mean R² | Δ vs {} | t | p | {level}% CI | W | HAC t ({}) | MBB CI (L={}) | MBB CI (L={}) | n_eff | sign p |",
        first.label_b,
        first.options.hac_bandwidths.map(|b| b.to_string()).join("/"),
        first.options.block_lengths[0],
        first.options.block_lengths[1],
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|---|");
    for r in reports {
        let hac: Vec<String> = r.hac.iter().map(|h| fmt_opt(h.map(|h| h.t), 2)).collect();
        let mbb = |l: usize| {
            r.block_bootstrap
                .iter()
                .find(|c| c.block_len == l)
                .map_or_else(|| "n/a".into(), |c| format!("[{:+.4}, {:+.4}]", c.lo, c.hi))
        };
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:+.4} | {} | {} | [{:+.4}, {:+.4}] | {}/{} | {} | {} | {} | {} | {:.4} |",
            r.label_a,
            r.mean_r2_a,
            r.delta_mean,
            fmt_opt(r.dm.map(|d| d.t), 2),
            fmt_opt(r.dm.map(|d| d.p), 4),
            r.bootstrap_ci.lo,
            r.bootstrap_ci.hi,
            r.sign_wins,
            r.sign_total,
            hac.join(" / "),
            mbb(r.options.block_lengths[0]),
            mbb(r.options.block_lengths[1]),
            fmt_opt(r.n_eff, 1),
            r.sign_p,
        );
    }
    let _ = writeln!(
        s,
        "\nBaseline {} mean R² {:.4}. Convention: {:?}; loss basis: {:?}; bootstrap resamples {}, seed {}.",
        first.label_b,
        first.mean_r2_b,
        first.options.convention,
        first.options.loss_basis,
        first.options.resamples,
        first.options.seed
    );
    s
}

/// Writes one CSV row per architecture × window.
pub fn write_window_csv<W: Write>(runs: &[(String, Vec<WindowResult>)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["architecture", "test_year", "r2_test_mean", "r2_train_mean", "mae", "mse", "mean_ic"])?;
    for (label, results) in runs {
        let ics = spearman_ic(results)?;
        for (w, ic) in results.iter().zip(ics.chunks(4)) {
            let r2 = |c| oos_r2(w, c).map_or_else(|_| "nan".to_string(), |v| format!("{v}"));
            let valid: Vec<f64> = ic.iter().flatten().copied().collect();
            let mean_ic = if valid.is_empty() { "".to_string() } else { format!("{}", valid.iter().sum::<f64>() / valid.len() as f64) };
            wtr.write_record([
                label.clone(),
                w.test_year.to_string(),
                r2(R2Convention::TestMean),
                r2(R2Convention::TrainMean),
                mae(std::slice::from_ref(w)).to_string(),
                window_mse(w).to_string(),
                mean_ic,
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
