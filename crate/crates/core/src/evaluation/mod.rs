//! Rolling out-of-sample protocol, accuracy metrics and forecast
//! comparison inference.

mod inference;
mod metrics;
mod report;
mod rolling;

pub use inference::{
    autocovariance, dm_test, effective_sample_size, hln_factor, holm_bonferroni, lag1_autocorrelation,
    moving_block_bootstrap_ci, n_eff_from_rho, nw_hac_t, nw_variance, paired_bootstrap_ci, quantile_sorted,
    sign_test, t_two_sided_p, t_upper_p, BootstrapCi, DmResult, HacResult,
};
pub use metrics::{mae, mean_r2, oos_r2, spearman, spearman_ic, window_mse, window_r2s, R2Convention};
pub use report::{comparison_markdown, compare, write_window_csv, CompareOptions, ComparisonReport, LossBasis};
pub use rolling::{rolling_oos_evaluate, Evaluator, OriginCache, WindowResult};
