use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::harness::{blocks_with_local, DeltaHarness, DeltaSummary};
use crate::error::{Error, Result};
use crate::evaluation::R2Convention;
use crate::exec::{try_map_indexed, Execution};
use crate::mixture::ArchitectureSpec;
use crate::panel::{Panel, RollingWindowSpec};

/// A candidate local block given by panel rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub rows: Vec<usize>,
}

impl Candidate {
    pub fn from_actor_ids(panel: &Panel, id: &str, actors: &[String]) -> Result<Self> {
        let mut rows = actors
            .iter()
            .map(|a| panel.actor_index(a).ok_or_else(|| Error::InvalidPartition(format!("unknown actor '{a}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows.sort_unstable();
        rows.dedup();
        Ok(Self { id: id.to_string(), rows })
    }

    fn overlaps(&self, other: &Candidate) -> bool {
        self.rows.iter().any(|r| other.rows.binary_search(r).is_ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: String,
    pub size: usize,
    #[serde(flatten)]
    pub summary: DeltaSummary,
}

/// `Δ > 0` and at least `min_wins` positive windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub min_wins: usize,
}

impl SelectionRule {
    pub fn selects(&self, s: &DeltaSummary) -> bool {
        s.delta > 0.0 && s.wins >= self.min_wins
    }
}

/// `⌈0.8·n⌉` wins out of `n` windows.
pub fn freeze_threshold(n_windows: usize) -> usize {
    (4 * n_windows).div_ceil(5)
}

fn single_block_deltas(
    harness: &DeltaHarness,
    candidates: &[Candidate],
    windows: &[usize],
    exec: Execution,
) -> Result<Vec<CandidateScore>> {
    let n = harness.panel().n_actors();
    try_map_indexed(exec, candidates.len(), |c| {
        let cand = &candidates[c];
        let blocks = blocks_with_local(n, &[(cand.id.clone(), cand.rows.clone())])?;
        let summary = harness.deltas_for(&blocks, windows, Execution::Sequential)?;
        Ok(CandidateScore { id: cand.id.clone(), size: cand.rows.len(), summary })
    })
}

/// Each candidate as the only local block, over every window.
pub fn candidate_scan(harness: &DeltaHarness, candidates: &[Candidate], exec: Execution) -> Result<Vec<CandidateScore>> {
    let all: Vec<usize> = (0..harness.n_windows()).collect();
    single_block_deltas(harness, candidates, &all, exec)
}

/// As [`candidate_scan`] restricted to the listed windows.
pub fn candidate_scan_windows(
    harness: &DeltaHarness,
    candidates: &[Candidate],
    windows: &[usize],
    exec: Execution,
) -> Result<Vec<CandidateScore>> {
    single_block_deltas(harness, candidates, windows, exec)
}

/// Indices of accepted candidates: highest Δ first, skipping any that
/// overlaps an already accepted one.
pub fn select_non_overlapping(candidates: &[Candidate], deltas: &[f64], accept: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&c| accept[c]).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for c in order {
        if chosen.iter().all(|&k| !candidates[k].overlaps(&candidates[c])) {
            chosen.push(c);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn local_set(candidates: &[Candidate], chosen: &[usize]) -> Vec<(String, Vec<usize>)> {
    chosen.iter().map(|&c| (candidates[c].id.clone(), candidates[c].rows.clone())).collect()
}

/// Markdown table: candidate, size, Δ, wins and the rule's verdict.
pub fn scan_markdown(scores: &[CandidateScore], rule: SelectionRule) -> String {
    let mut s = String::from("| Candidate | N_b | Δ | W | Selected |\n|---|---|---|---|---|\n");
    for c in scores {
        let _ = writeln!(
            s,
            "| {} | {} | {:+.4} | {}/{} | {} |",
            c.id,
            c.size,
            c.summary.delta,
            c.summary.wins,
            c.summary.windows(),
            if rule.selects(&c.summary) { "yes" } else { "no" }
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowoWindow {
    pub test_year: i32,
    pub selected: Vec<String>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowoResult {
    pub scores: Vec<CandidateScore>,
    pub windows: Vec<LowoWindow>,
    /// Each window evaluated under its own leave-one-out selection.
    pub clean: DeltaSummary,
    /// Selection from all windows, evaluated on all windows.
    pub contaminated_selection: Vec<String>,
    pub contaminated: DeltaSummary,
}

/// Leave-one-window-out selection: window `w` uses the candidates whose
/// mean single-block Δ over the other windows is positive.
pub fn lowo_block_selection(harness: &DeltaHarness, candidates: &[Candidate], exec: Execution) -> Result<LowoResult> {
    let n = harness.panel().n_actors();
    let n_w = harness.n_windows();
    if n_w < 2 {
        return Err(Error::Precondition("leave-one-window-out needs at least 2 windows".into()));
    }
    let scores = candidate_scan(harness, candidates, exec)?;
    let selection = |exclude: Option<usize>| {
        let means: Vec<f64> = scores
            .iter()
            .map(|s| {
                let (sum, k) = s
                    .summary
                    .deltas
                    .iter()
                    .enumerate()
                    .filter(|(w, _)| Some(*w) != exclude)
                    .fold((0.0, 0usize), |(a, k), (_, d)| (a + d, k + 1));
                sum / k as f64
            })
            .collect();
        let accept: Vec<bool> = means.iter().map(|&m| m > 0.0).collect();
        select_non_overlapping(candidates, &means, &accept)
    };
    // Windows sharing a selection are evaluated together.
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for w in 0..n_w {
        groups.entry(selection(Some(w))).or_default().push(w);
    }
    let mut clean = vec![0.0; n_w];
    let mut chosen_by_window = vec![Vec::new(); n_w];
    for (chosen, windows) in &groups {
        let blocks = blocks_with_local(n, &local_set(candidates, chosen))?;
        let s = harness.deltas_for(&blocks, windows, exec)?;
        for (&w, d) in windows.iter().zip(s.deltas) {
            clean[w] = d;
            chosen_by_window[w] = chosen.iter().map(|&c| candidates[c].id.clone()).collect();
        }
    }
    let full = selection(None);
    let contaminated = harness.deltas(&blocks_with_local(n, &local_set(candidates, &full))?, exec)?;
    let years = harness.test_years();
    Ok(LowoResult {
        scores,
        windows: (0..n_w)
            .map(|w| LowoWindow { test_year: years[w], selected: chosen_by_window[w].clone(), delta: clean[w] })
            .collect(),
        clean: DeltaSummary::from_deltas(clean),
        contaminated_selection: full.iter().map(|&c| candidates[c].id.clone()).collect(),
        contaminated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeResult {
    pub phase_a_years: Vec<i32>,
    pub phase_b_years: Vec<i32>,
    pub rule: SelectionRule,
    pub phase_a_scores: Vec<CandidateScore>,
    pub frozen: Vec<String>,
    pub phase_b: DeltaSummary,
}

/// Scans candidates on phase A, freezes the selection under
/// `Δ > 0 ∧ W ≥ ⌈0.8·n_A⌉`, and evaluates it unchanged on phase B.
#[allow(clippy::too_many_arguments)]
pub fn held_out_freeze(
    panel: &Panel,
    candidates: &[Candidate],
    spec: &ArchitectureSpec,
    baseline: &ArchitectureSpec,
    phase_a: &RollingWindowSpec,
    phase_b: &RollingWindowSpec,
    convention: R2Convention,
    exec: Execution,
) -> Result<FreezeResult> {
    let (Some(last_a), Some(first_b)) = (phase_a.test_years.last(), phase_b.test_years.first()) else {
        return Err(Error::InfeasibleCalendar("both phases need test years".into()));
    };
    if last_a >= first_b {
        return Err(Error::OverlappingPhases(format!("phase A ends {last_a}, phase B starts {first_b}")));
    }
    let harness_a = DeltaHarness::new(panel, phase_a, spec, baseline, convention, exec)?;
    let rule = SelectionRule { min_wins: freeze_threshold(harness_a.n_windows()) };
    let scores = candidate_scan(&harness_a, candidates, exec)?;
    let deltas: Vec<f64> = scores.iter().map(|s| s.summary.delta).collect();
    let accept: Vec<bool> = scores.iter().map(|s| rule.selects(&s.summary)).collect();
    let chosen = select_non_overlapping(candidates, &deltas, &accept);
    drop(harness_a);
    let harness_b = DeltaHarness::new(panel, phase_b, spec, baseline, convention, exec)?;
    let blocks = blocks_with_local(panel.n_actors(), &local_set(candidates, &chosen))?;
    let phase_b_summary = harness_b.deltas(&blocks, exec)?;
    Ok(FreezeResult {
        phase_a_years: phase_a.test_years.clone(),
        phase_b_years: phase_b.test_years.clone(),
        rule,
        phase_a_scores: scores,
        frozen: chosen.iter().map(|&c| candidates[c].id.clone()).collect(),
        phase_b: phase_b_summary,
    })
}
