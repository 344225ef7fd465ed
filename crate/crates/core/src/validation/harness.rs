use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{window_r2s, Evaluator, OriginCache, R2Convention};
use crate::exec::Execution;
use crate::mixture::ArchitectureSpec;
use crate::panel::{Panel, ResolvedBlock, RollingWindowSpec};

/// Per-window R² differentials of a candidate against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub deltas: Vec<f64>,
    pub delta: f64,
    pub wins: usize,
}

impl DeltaSummary {
    pub fn from_deltas(deltas: Vec<f64>) -> Self {
        let delta = if deltas.is_empty() { 0.0 } else { deltas.iter().sum::<f64>() / deltas.len() as f64 };
        let wins = deltas.iter().filter(|&&d| d > 0.0).count();
        Self { deltas, delta, wins }
    }

    pub fn windows(&self) -> usize {
        self.deltas.len()
    }
}

/// Evaluates `spec` under varying partitions against a fixed baseline.
#[derive(Debug, Clone)]
pub struct DeltaHarness<'a> {
    eval: Evaluator<'a>,
    spec: ArchitectureSpec,
    cache: OriginCache,
    baseline_r2: Vec<f64>,
    convention: R2Convention,
}

impl<'a> DeltaHarness<'a> {
    pub fn new(
        panel: &'a Panel,
        cal: &RollingWindowSpec,
        spec: &ArchitectureSpec,
        baseline: &ArchitectureSpec,
        convention: R2Convention,
        exec: Execution,
    ) -> Result<Self> {
        spec.validate()?;
        baseline.validate()?;
        if baseline.kind.needs_partition() {
            return Err(Error::Precondition(format!("baseline {} needs a partition", baseline.kind)));
        }
        let eval = Evaluator::new(panel, cal)?;
        let cache = eval.prepare(spec, exec)?;
        let base = eval.run_cached(baseline, &[], &cache, exec)?;
        let baseline_r2 = window_r2s(&base, convention)?;
        Ok(Self { eval, spec: spec.clone(), cache, baseline_r2, convention })
    }

    pub fn evaluator(&self) -> &Evaluator<'a> {
        &self.eval
    }

    pub fn panel(&self) -> &Panel {
        self.eval.panel()
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn baseline_r2(&self) -> &[f64] {
        &self.baseline_r2
    }

    pub fn convention(&self) -> R2Convention {
        self.convention
    }

    pub fn n_windows(&self) -> usize {
        self.baseline_r2.len()
    }

    pub fn test_years(&self) -> Vec<i32> {
        self.eval.plans().iter().map(|p| p.test_year).collect()
    }

    /// Differentials over every window.
    pub fn deltas(&self, blocks: &[ResolvedBlock], exec: Execution) -> Result<DeltaSummary> {
        let all: Vec<usize> = (0..self.n_windows()).collect();
        self.deltas_for(blocks, &all, exec)
    }

    /// Differentials over the listed windows, in the given order.
    pub fn deltas_for(&self, blocks: &[ResolvedBlock], windows: &[usize], exec: Execution) -> Result<DeltaSummary> {
        self.deltas_inner(&self.spec, blocks, windows, exec)
    }

    /// Differentials of another architecture against the same baseline.
    /// Cached fits are reused when they apply to `spec`.
    pub fn deltas_with(&self, spec: &ArchitectureSpec, blocks: &[ResolvedBlock], exec: Execution) -> Result<DeltaSummary> {
        spec.validate()?;
        let all: Vec<usize> = (0..self.n_windows()).collect();
        self.deltas_inner(spec, blocks, &all, exec)
    }

    fn deltas_inner(
        &self,
        spec: &ArchitectureSpec,
        blocks: &[ResolvedBlock],
        windows: &[usize],
        exec: Execution,
    ) -> Result<DeltaSummary> {
        let res = self.eval.run_windows(spec, blocks, windows, Some(&self.cache), exec)?;
        let r2 = window_r2s(&res, self.convention)?;
        let deltas = windows.iter().zip(r2).map(|(&w, r)| r - self.baseline_r2[w]).collect();
        Ok(DeltaSummary::from_deltas(deltas))
    }
}

/// Blocks with the given local row sets followed by a remainder holding
/// every other row. Row sets must be disjoint.
pub fn blocks_with_local(n: usize, local: &[(String, Vec<usize>)]) -> Result<Vec<ResolvedBlock>> {
    let mut taken = vec![false; n];
    let mut blocks = Vec::with_capacity(local.len() + 1);
    for (id, rows) in local {
        let mut rows = rows.clone();
        rows.sort_unstable();
        for &r in &rows {
            if r >= n {
                return Err(Error::InvalidPartition(format!("row {r} out of range in block '{id}'")));
            }
            if std::mem::replace(&mut taken[r], true) {
                return Err(Error::InvalidPartition(format!("row {r} assigned twice")));
            }
        }
        blocks.push(ResolvedBlock { id: id.clone(), rows, local: true });
    }
    let rest = (0..n).filter(|&r| !taken[r]).collect();
    blocks.push(ResolvedBlock { id: "remainder".into(), rows: rest, local: false });
    Ok(blocks)
}
