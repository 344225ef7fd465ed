use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::harness::{DeltaHarness, DeltaSummary};
use crate::error::{Error, Result};
use crate::evaluation::R2Convention;
use crate::exec::Execution;
use crate::mixture::ArchitectureSpec;
use crate::panel::{BlockPartition, Panel, RollingWindowSpec};

/// One variant of the base partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Baseline,
    /// Reassign actors to existing blocks, applied in order.
    Moves { moves: Vec<(String, String)> },
    /// Remove a block's actors from the panel and re-estimate.
    DropBlock { block: String },
    /// Keep the actors but hand the block to the global model.
    Unlocal { block: String },
    /// Give the remainder its own local model as well.
    RemainderLocal,
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::Baseline => "baseline".into(),
            Perturbation::Moves { moves } => {
                let parts: Vec<String> = moves.iter().map(|(a, b)| format!("{a}->{b}")).collect();
                format!("move {}", parts.join(", "))
            }
            Perturbation::DropBlock { block } => format!("drop {block}"),
            Perturbation::Unlocal { block } => format!("unlocal {block}"),
            Perturbation::RemainderLocal => "remainder local".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub label: String,
    pub n_actors: usize,
    #[serde(flatten)]
    pub summary: DeltaSummary,
}

fn drop_block(panel: &Panel, partition: &BlockPartition, block: &str) -> Result<(Panel, BlockPartition)> {
    if !partition.block_ids().iter().any(|b| b == block) {
        return Err(Error::InvalidPartition(format!("unknown block '{block}'")));
    }
    let keep: Vec<usize> = panel
        .actor_ids()
        .enumerate()
        .filter(|(_, a)| partition.block_of(a) != Some(block))
        .map(|(i, _)| i)
        .collect();
    let sub = panel.select_actors(&keep)?;
    let assignment: BTreeMap<String, String> =
        partition.assignment().iter().filter(|(_, b)| *b != block).map(|(a, b)| (a.clone(), b.clone())).collect();
    let mut local = partition.local_blocks().clone();
    local.remove(block);
    let remainder = if block == partition.remainder_block() { "remainder".to_string() } else { partition.remainder_block().to_string() };
    let part = BlockPartition::new(assignment, local, remainder)?;
    part.validate(&sub)?;
    Ok((sub, part))
}

/// Runs the full pipeline under each variant and tabulates Δ and wins
/// against the baseline architecture on the same actors.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_suite(
    panel: &Panel,
    partition: &BlockPartition,
    spec: &ArchitectureSpec,
    baseline: &ArchitectureSpec,
    cal: &RollingWindowSpec,
    variants: &[Perturbation],
    convention: R2Convention,
    exec: Execution,
) -> Result<Vec<VariantResult>> {
    let harness = DeltaHarness::new(panel, cal, spec, baseline, convention, exec)?;
    variants
        .iter()
        .map(|v| {
            let (n_actors, summary) = match v {
                Perturbation::Baseline => (panel.n_actors(), harness.deltas(&partition.resolve(panel)?, exec)?),
                Perturbation::Moves { moves } => {
                    let mut p = partition.clone();
                    for (actor, block) in moves {
                        p = p.reassign(actor, block)?;
                    }
                    (panel.n_actors(), harness.deltas(&p.resolve(panel)?, exec)?)
                }
                Perturbation::Unlocal { block } => {
                    if !partition.is_local(block) {
                        return Err(Error::InvalidPartition(format!("block '{block}' is not local")));
                    }
                    let mut blocks = partition.resolve(panel)?;
                    for b in blocks.iter_mut().filter(|b| &b.id == block) {
                        b.local = false;
                    }
                    (panel.n_actors(), harness.deltas(&blocks, exec)?)
                }
                Perturbation::RemainderLocal => {
                    let mut blocks = partition.resolve(panel)?;
                    for b in blocks.iter_mut() {
                        b.local = !b.rows.is_empty();
                    }
                    (panel.n_actors(), harness.deltas(&blocks, exec)?)
                }
                Perturbation::DropBlock { block } => {
                    let (sub, part) = drop_block(panel, partition, block)?;
                    let h = DeltaHarness::new(&sub, cal, spec, baseline, convention, exec)?;
                    (sub.n_actors(), h.deltas(&part.resolve(&sub)?, exec)?)
                }
            };
            Ok(VariantResult { label: v.label(), n_actors, summary })
        })
        .collect()
}
