use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::harness::DeltaHarness;
use crate::error::{Error, Result};
use crate::evaluation::quantile_sorted;
use crate::exec::{task_rng, try_map_indexed, Execution};
use crate::panel::{BlockPartition, ResolvedBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboOptions {
    pub n_perms: usize,
    pub seed: u64,
    /// Actors held in place; must be a union of whole blocks.
    pub fixed_actors: Option<BTreeSet<String>>,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        Self { n_perms: 1000, seed: 20_240_101, fixed_actors: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub real_delta: f64,
    pub real_deltas: Vec<f64>,
    pub perm_deltas: Vec<f64>,
    pub perm_mean: f64,
    pub perm_std: f64,
    /// `None` when every permutation gives the same Δ.
    pub z: Option<f64>,
    /// `(#{perm ≥ real} + 1)/(n + 1)`.
    pub p: f64,
    /// 2.5% and 97.5% quantiles of the permutation distribution.
    pub band95: (f64, f64),
    pub n_perms: usize,
    pub seed: u64,
    /// `(block id, size, local)` in template order.
    pub template: Vec<(String, usize, bool)>,
    pub fixed_actors: Vec<String>,
}

/// Reassigns the non-fixed rows of `template` at random, keeping every
/// block's size and local role.
///
/// The permutable rows (ascending) are shuffled by Fisher–Yates and cut
/// into the non-fixed blocks' sizes in template order.
pub fn permute_blocks<R: Rng + ?Sized>(template: &[ResolvedBlock], fixed: &[bool], rng: &mut R) -> Vec<ResolvedBlock> {
    let mut pool: Vec<usize> = template.iter().filter(|b| !is_fixed(b, fixed)).flat_map(|b| b.rows.iter().copied()).collect();
    pool.sort_unstable();
    pool.shuffle(rng);
    let mut next = pool.into_iter();
    template
        .iter()
        .map(|b| {
            if b.rows.is_empty() || is_fixed(b, fixed) {
                return b.clone();
            }
            let mut rows: Vec<usize> = next.by_ref().take(b.rows.len()).collect();
            rows.sort_unstable();
            ResolvedBlock { id: b.id.clone(), rows, local: b.local }
        })
        .collect()
}

fn is_fixed(b: &ResolvedBlock, fixed: &[bool]) -> bool {
    b.rows.first().is_some_and(|&r| fixed[r])
}

fn fixed_mask(harness: &DeltaHarness, template: &[ResolvedBlock], fixed: Option<&BTreeSet<String>>) -> Result<Vec<bool>> {
    let panel = harness.panel();
    let mut mask = vec![false; panel.n_actors()];
    let Some(fixed) = fixed else {
        return Ok(mask);
    };
    for id in fixed {
        let row = panel
            .actor_index(id)
            .ok_or_else(|| Error::Stratification(format!("unknown fixed actor '{id}'")))?;
        mask[row] = true;
    }
    for b in template {
        let n_fixed = b.rows.iter().filter(|&&r| mask[r]).count();
        if n_fixed != 0 && n_fixed != b.rows.len() {
            return Err(Error::Stratification(format!(
                "block '{}' has {n_fixed} of {} actors fixed; fixed set must be a union of whole blocks",
                b.id,
                b.rows.len()
            )));
        }
    }
    Ok(mask)
}

/// Runs the partition and `n_perms` size-matched random partitions through
/// the harness. Permutation `k` draws from stream `(seed, k)`.
pub fn placebo_test(
    harness: &DeltaHarness,
    partition: &BlockPartition,
    opts: &PlaceboOptions,
    exec: Execution,
) -> Result<PlaceboResult> {
    if opts.n_perms == 0 {
        return Err(Error::EmptyPermutationSet);
    }
    let template = partition.resolve(harness.panel())?;
    let fixed = fixed_mask(harness, &template, opts.fixed_actors.as_ref())?;
    if template.iter().all(|b| b.rows.is_empty() || is_fixed(b, &fixed)) {
        return Err(Error::Stratification("every actor is fixed; nothing to permute".into()));
    }
    let real = harness.deltas(&template, exec)?;
    let perm_deltas = try_map_indexed(exec, opts.n_perms, |k| {
        let blocks = permute_blocks(&template, &fixed, &mut task_rng(opts.seed, k as u64));
        harness.deltas(&blocks, Execution::Sequential).map(|s| s.delta)
    })?;
    let n = perm_deltas.len() as f64;
    let perm_mean = perm_deltas.iter().sum::<f64>() / n;
    let perm_std = if perm_deltas.len() > 1 {
        (perm_deltas.iter().map(|d| (d - perm_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let z = (perm_std > 0.0).then(|| (real.delta - perm_mean) / perm_std);
    let exceed = perm_deltas.iter().filter(|&&d| d >= real.delta).count();
    let mut sorted = perm_deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let band95 = (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975));
    let panel = harness.panel();
    Ok(PlaceboResult {
        real_delta: real.delta,
        real_deltas: real.deltas,
        perm_deltas,
        perm_mean,
        perm_std,
        z,
        p: (exceed + 1) as f64 / (n + 1.0),
        band95,
        n_perms: opts.n_perms,
        seed: opts.seed,
        template: template.iter().map(|b| (b.id.clone(), b.rows.len(), b.local)).collect(),
        fixed_actors: panel.actor_ids().enumerate().filter(|(i, _)| fixed[*i]).map(|(_, a)| a.to_string()).collect(),
    })
}
