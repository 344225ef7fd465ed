use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};

/// Minimum size of a locally modelled block.
pub const MIN_LOCAL_BLOCK: usize = 5;

/// Assignment of actors to blocks, with a subset of blocks treated locally.
///
/// Exactly one non-local block exists: the remainder, which keeps the global
/// residual model. It may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    assignment: BTreeMap<String, String>,
    local_blocks: BTreeSet<String>,
    remainder_block: String,
}

/// A block resolved to panel row indices (ascending panel order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedBlock {
    pub id: String,
    pub rows: Vec<usize>,
    pub local: bool,
}

impl BlockPartition {
    pub fn new(
        assignment: BTreeMap<String, String>,
        local_blocks: BTreeSet<String>,
        remainder_block: impl Into<String>,
    ) -> Result<Self> {
        let remainder_block = remainder_block.into();
        if local_blocks.contains(&remainder_block) {
            return Err(Error::InvalidPartition(format!("remainder block '{remainder_block}' is also local")));
        }
        for block in assignment.values() {
            if block != &remainder_block && !local_blocks.contains(block) {
                return Err(Error::InvalidPartition(format!(
                    "block '{block}' is neither local nor the remainder '{remainder_block}'"
                )));
            }
        }
        Ok(Self { assignment, local_blocks, remainder_block })
    }

    /// Every actor in one non-local block.
    pub fn single_block(panel: &Panel, block: &str) -> Self {
        let assignment = panel.actor_ids().map(|a| (a.to_string(), block.to_string())).collect();
        Self { assignment, local_blocks: BTreeSet::new(), remainder_block: block.to_string() }
    }

    /// Builds a partition from explicit local blocks; every other panel actor
    /// lands in `remainder_block`.
    pub fn from_local_blocks(panel: &Panel, local: &[(String, Vec<String>)], remainder_block: &str) -> Result<Self> {
        let mut assignment: BTreeMap<String, String> =
            panel.actor_ids().map(|a| (a.to_string(), remainder_block.to_string())).collect();
        let mut local_blocks = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for (block, actors) in local {
            local_blocks.insert(block.clone());
            for a in actors {
                if !seen.insert(a.clone()) {
                    return Err(Error::InvalidPartition(format!("actor '{a}' assigned to two blocks")));
                }
                match assignment.get_mut(a) {
                    Some(slot) => *slot = block.clone(),
                    None => return Err(Error::InvalidPartition(format!("unknown actor '{a}'"))),
                }
            }
        }
        let p = Self::new(assignment, local_blocks, remainder_block)?;
        p.validate(panel)?;
        Ok(p)
    }

    pub fn assignment(&self) -> &BTreeMap<String, String> {
        &self.assignment
    }

    pub fn local_blocks(&self) -> &BTreeSet<String> {
        &self.local_blocks
    }

    pub fn remainder_block(&self) -> &str {
        &self.remainder_block
    }

    pub fn block_of(&self, actor_id: &str) -> Option<&str> {
        self.assignment.get(actor_id).map(String::as_str)
    }

    pub fn is_local(&self, block: &str) -> bool {
        self.local_blocks.contains(block)
    }

    /// Same assignment with a different local set.
    pub fn with_local_blocks(&self, local: BTreeSet<String>) -> Result<Self> {
        Self::new(self.assignment.clone(), local, self.remainder_block.clone())
    }

    /// Moves `actor_id` into `block`, creating nothing: the block must exist
    /// as local or be the remainder.
    pub fn reassign(&self, actor_id: &str, block: &str) -> Result<Self> {
        if !self.assignment.contains_key(actor_id) {
            return Err(Error::InvalidPartition(format!("unknown actor '{actor_id}'")));
        }
        if block != self.remainder_block && !self.local_blocks.contains(block) {
            return Err(Error::InvalidPartition(format!("unknown block '{block}'")));
        }
        let mut assignment = self.assignment.clone();
        assignment.insert(actor_id.to_string(), block.to_string());
        Self::new(assignment, self.local_blocks.clone(), self.remainder_block.clone())
    }

    /// Checks the partition covers exactly the panel's actors and that local
    /// blocks are large enough for a local factor model.
    pub fn validate(&self, panel: &Panel) -> Result<()> {
        if self.assignment.len() != panel.n_actors() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} actors, panel has {}",
                self.assignment.len(),
                panel.n_actors()
            )));
        }
        for id in panel.actor_ids() {
            if !self.assignment.contains_key(id) {
                return Err(Error::InvalidPartition(format!("actor '{id}' not assigned")));
            }
        }
        for block in &self.local_blocks {
            let size = self.assignment.values().filter(|b| *b == block).count();
            if size < MIN_LOCAL_BLOCK {
                return Err(Error::InvalidPartition(format!(
                    "local block '{block}' has {size} actors, need at least {MIN_LOCAL_BLOCK}"
                )));
            }
        }
        Ok(())
    }

    /// Resolves blocks to row indices. Local blocks come first in id order,
    /// the remainder last; this order is the size template used by placebo
    /// permutations.
    pub fn resolve(&self, panel: &Panel) -> Result<Vec<ResolvedBlock>> {
        self.validate(panel)?;
        let mut blocks: Vec<ResolvedBlock> = self
            .local_blocks
            .iter()
            .map(|id| ResolvedBlock { id: id.clone(), rows: Vec::new(), local: true })
            .collect();
        blocks.push(ResolvedBlock { id: self.remainder_block.clone(), rows: Vec::new(), local: false });
        for (row, id) in panel.actor_ids().enumerate() {
            let block = &self.assignment[id];
            let slot = blocks.iter_mut().find(|b| &b.id == block).expect("validated block");
            slot.rows.push(row);
        }
        Ok(blocks)
    }

    /// All block ids, local ones first then the remainder.
    pub fn block_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.local_blocks.iter().cloned().collect();
        ids.push(self.remainder_block.clone());
        ids
    }

    pub fn block_size(&self, block: &str) -> usize {
        self.assignment.values().filter(|b| *b == block).count()
    }
}

fn parse_bool(s: &str, line: usize) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Parse { line, msg: format!("is_local must be true/false, got '{other}'") }),
    }
}

/// Reads `actor_id,block_id,is_local` rows.
pub fn load_partition(path: impl AsRef<Path>) -> Result<BlockPartition> {
    read_partition(fs::File::open(path)?)
}

pub fn read_partition<R: Read>(reader: R) -> Result<BlockPartition> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["actor_id", "block_id", "is_local"]) {
        return Err(Error::Parse { line: 1, msg: "partition header must be actor_id,block_id,is_local".into() });
    }
    let mut assignment = BTreeMap::new();
    let mut local = BTreeSet::new();
    let mut non_local = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let (actor, block) = (rec[0].to_string(), rec[1].to_string());
        if parse_bool(&rec[2], line)? {
            local.insert(block.clone());
        } else {
            non_local.insert(block.clone());
        }
        if assignment.insert(actor.clone(), block).is_some() {
            return Err(Error::InvalidPartition(format!("actor '{actor}' listed twice")));
        }
    }
    if let Some(both) = local.intersection(&non_local).next() {
        return Err(Error::InvalidPartition(format!("block '{both}' marked both local and non-local")));
    }
    let remainder = match non_local.len() {
        0 => "remainder".to_string(),
        1 => non_local.into_iter().next().unwrap(),
        _ => {
            return Err(Error::InvalidPartition(format!(
                "more than one non-local block: {}",
                non_local.into_iter().collect::<Vec<_>>().join(", ")
            )))
        }
    };
    BlockPartition::new(assignment, local, remainder)
}

pub fn save_partition(partition: &BlockPartition, path: impl AsRef<Path>) -> Result<()> {
    write_partition(partition, fs::File::create(path)?)
}

pub fn write_partition<W: Write>(partition: &BlockPartition, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["actor_id", "block_id", "is_local"])?;
    for (actor, block) in &partition.assignment {
        let local = if partition.is_local(block) { "true" } else { "false" };
        wtr.write_record([actor.as_str(), block.as_str(), local])?;
    }
    wtr.flush()?;
    Ok(())
}
