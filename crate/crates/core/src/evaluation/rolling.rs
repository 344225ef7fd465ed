use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::mixture::{cacheable, forecast_origin, prepare_origin, ArchitectureSpec, PreparedOrigin};
use crate::panel::{BlockPartition, Panel, Quarter, ResolvedBlock, RollingWindowSpec, WindowPlan};

/// Forecasts and actuals of one test year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub test_year: i32,
    pub quarters: Vec<Quarter>,
    /// N×4, one column per test quarter.
    pub forecasts: DMatrix<f64>,
    pub actuals: DMatrix<f64>,
    pub per_actor_test_means: DVector<f64>,
    /// Per-actor mean over the first training span of the year.
    pub train_means: DVector<f64>,
}

/// Resolved calendar bound to a panel.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    panel: &'a Panel,
    plans: Vec<WindowPlan>,
}

/// Partition-independent fits for every origin of a calendar.
#[derive(Debug, Clone)]
pub struct OriginCache {
    spec: ArchitectureSpec,
    prepared: Vec<PreparedOrigin>,
}

impl OriginCache {
    /// Whether this cache can serve `spec`.
    pub fn serves(&self, spec: &ArchitectureSpec) -> bool {
        cacheable(spec.kind)
            && !spec.zero_stage2
            && spec.global_engine_spec() == self.spec.global_engine_spec()
            && spec.engine == self.spec.engine
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(panel: &'a Panel, cal: &RollingWindowSpec) -> Result<Self> {
        Ok(Self { panel, plans: cal.plan(panel)? })
    }

    pub fn panel(&self) -> &Panel {
        self.panel
    }

    pub fn plans(&self) -> &[WindowPlan] {
        &self.plans
    }

    fn n_origins(&self) -> usize {
        self.plans.len() * 4
    }

    fn train(&self, index: usize) -> DMatrix<f64> {
        let o = self.plans[index / 4].origins[index % 4];
        self.panel.values().columns(o.train_start, o.train_len()).into_owned()
    }

    /// Fits the partition-independent parts at every origin.
    pub fn prepare(&self, spec: &ArchitectureSpec, exec: Execution) -> Result<OriginCache> {
        let prepared = try_map_indexed(exec, self.n_origins(), |k| prepare_origin(spec, &self.train(k)))?;
        Ok(OriginCache { spec: spec.clone(), prepared })
    }

    /// Runs `spec` over every window; origins are independent tasks.
    pub fn run(&self, spec: &ArchitectureSpec, blocks: &[ResolvedBlock], exec: Execution) -> Result<Vec<WindowResult>> {
        self.run_inner(spec, blocks, None, exec)
    }

    /// As [`Evaluator::run`], reusing cached Stage-1 and global fits when
    /// the cache serves `spec`.
    pub fn run_cached(
        &self,
        spec: &ArchitectureSpec,
        blocks: &[ResolvedBlock],
        cache: &OriginCache,
        exec: Execution,
    ) -> Result<Vec<WindowResult>> {
        self.run_inner(spec, blocks, Some(cache), exec)
    }

    /// Runs only the listed windows (indices into [`Evaluator::plans`]).
    pub fn run_windows(
        &self,
        spec: &ArchitectureSpec,
        blocks: &[ResolvedBlock],
        windows: &[usize],
        cache: Option<&OriginCache>,
        exec: Execution,
    ) -> Result<Vec<WindowResult>> {
        if let Some(&w) = windows.iter().find(|&&w| w >= self.plans.len()) {
            return Err(Error::Precondition(format!("window {w} out of range ({} windows)", self.plans.len())));
        }
        let cache = cache.filter(|c| c.serves(spec));
        let forecasts = try_map_indexed(exec, 4 * windows.len(), |k| {
            let origin = 4 * windows[k / 4] + k % 4;
            let prepared = cache.map(|c| &c.prepared[origin]);
            forecast_origin(spec, &self.train(origin), blocks, prepared)
        })?;
        Ok(windows
            .iter()
            .enumerate()
            .map(|(j, &w)| self.assemble(&self.plans[w], &forecasts[4 * j..4 * j + 4]))
            .collect())
    }

    fn run_inner(
        &self,
        spec: &ArchitectureSpec,
        blocks: &[ResolvedBlock],
        cache: Option<&OriginCache>,
        exec: Execution,
    ) -> Result<Vec<WindowResult>> {
        let all: Vec<usize> = (0..self.plans.len()).collect();
        self.run_windows(spec, blocks, &all, cache, exec)
    }

    fn assemble(&self, plan: &WindowPlan, forecasts: &[DVector<f64>]) -> WindowResult {
        let values = self.panel.values();
        let n = self.panel.n_actors();
        let targets: Vec<usize> = plan.origins.iter().map(|o| o.target).collect();
        let actuals = values.select_columns(targets.iter());
        let mut f = DMatrix::zeros(n, 4);
        for (q, col) in forecasts.iter().enumerate() {
            f.set_column(q, col);
        }
        let first = plan.origins[0];
        let train = values.columns(first.train_start, first.train_len());
        let train_means = DVector::from_iterator(n, train.row_iter().map(|r| r.sum() / r.len() as f64));
        let per_actor_test_means = DVector::from_iterator(n, actuals.row_iter().map(|r| r.sum() / 4.0));
        WindowResult {
            test_year: plan.test_year,
            quarters: targets.iter().map(|&t| self.panel.quarters()[t]).collect(),
            forecasts: f,
            actuals,
            per_actor_test_means,
            train_means,
        }
    }
}

/// Evaluates `spec` on `panel` over the calendar `cal`.
pub fn rolling_oos_evaluate(
    panel: &Panel,
    spec: &ArchitectureSpec,
    partition: Option<&BlockPartition>,
    cal: &RollingWindowSpec,
    exec: Execution,
) -> Result<Vec<WindowResult>> {
    let blocks = match partition {
        Some(p) => p.resolve(panel)?,
        None => Vec::new(),
    };
    Evaluator::new(panel, cal)?.run(spec, &blocks, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::ArchitectureKind;
    use crate::panel::test_support::panel_from_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy_panel(n: usize, t: usize, seed: u64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut y = i as f64 / n as f64;
                (0..t)
                    .map(|_| {
                        y = 0.5 * i as f64 / n as f64 + 0.5 * y + noise.sample(&mut rng);
                        y
                    })
                    .collect()
            })
            .collect();
        panel_from_rows(&rows, "2000Q1")
    }

    #[test]
    fn persistent_actors_forecast_last_value() {
        // Deterministic trends give a pooled ρ̂ at the clip.
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..52).map(|t| i as f64 + 0.01 * (i + 1) as f64 * t as f64).collect()).collect();
        let p = panel_from_rows(&rows, "2000Q1");
        let spec = ArchitectureSpec::new(ArchitectureKind::G0);
        let res = rolling_oos_evaluate(&p, &spec, None, &RollingWindowSpec::years(2010, 2012, 10), Execution::Sequential).unwrap();
        for w in &res {
            for q in 0..4 {
                let target = p.quarter_index(w.quarters[q]).unwrap();
                for i in 0..6 {
                    let last = p.values()[(i, target - 1)];
                    let step = 0.01 * (i + 1) as f64;
                    assert!((w.forecasts[(i, q)] - last).abs() < 0.15 * step, "actor {i}");
                }
            }
        }
    }

    #[test]
    fn appending_future_quarters_changes_nothing() {
        let p = noisy_panel(8, 40, 3);
        let cal = RollingWindowSpec::years(2006, 2008, 5);
        let longer = p.append_quarters(&DMatrix::from_element(8, 6, 7.5)).unwrap();
        for kind in [ArchitectureKind::G0, ArchitectureKind::G1] {
            let spec = ArchitectureSpec { global_k: 3, ..ArchitectureSpec::new(kind) };
            let a = rolling_oos_evaluate(&p, &spec, None, &cal, Execution::Sequential).unwrap();
            let b = rolling_oos_evaluate(&longer, &spec, None, &cal, Execution::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn window_shape_and_quarters() {
        let p = noisy_panel(6, 32, 4);
        let spec = ArchitectureSpec::new(ArchitectureKind::G0);
        let res = rolling_oos_evaluate(&p, &spec, None, &RollingWindowSpec::years(2005, 2007, 5), Execution::Sequential).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[1].quarters[3].to_string(), "2006Q4");
        assert_eq!(res[0].forecasts.shape(), (6, 4));
        assert_eq!(res[2].actuals.column(0), p.values().column(28));
    }
}
