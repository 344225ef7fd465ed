//! Panel data model, ingestion, normalization transforms and the rolling
//! window calendar.
//!
//! A [`Panel`] is a balanced N×T matrix: rows are actors, columns are
//! consecutive quarters. Panels are immutable; every transform returns a
//! new panel.

mod calendar;
mod io;
mod partition;
mod quarter;
mod transforms;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calendar::{ForecastOrigin, RefitPolicy, RollingWindowSpec, WindowPlan};
pub use io::{load_panel, read_panel, save_panel, write_panel};
pub use partition::{load_partition, read_partition, save_partition, write_partition, BlockPartition, ResolvedBlock, MIN_LOCAL_BLOCK};
pub use quarter::Quarter;
pub use transforms::{
    first_difference, lag_actors, minmax_normalize, minmax_normalize_actors,
    percentile_rank_transform, percentile_ranks, MinMaxMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Macro,
    Institutional,
    Firm,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Macro => "macro",
            Layer::Institutional => "institutional",
            Layer::Firm => "firm",
        })
    }
}

impl FromStr for Layer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "macro" => Ok(Layer::Macro),
            "institutional" => Ok(Layer::Institutional),
            "firm" => Ok(Layer::Firm),
            other => Err(Error::RegistryConflict(format!("unknown layer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorMeta {
    pub actor_id: String,
    pub layer: Layer,
    pub sector: String,
}

impl ActorMeta {
    pub fn new(actor_id: impl Into<String>, layer: Layer, sector: impl Into<String>) -> Self {
        Self { actor_id: actor_id.into(), layer, sector: sector.into() }
    }
}

/// Balanced panel of actor intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    quarters: Vec<Quarter>,
    registry: Vec<ActorMeta>,
    provenance: Option<String>,
}

impl Panel {
    /// Validates shape, registry uniqueness and the calendar.
    pub fn new(values: DMatrix<f64>, quarters: Vec<Quarter>, registry: Vec<ActorMeta>) -> Result<Self> {
        if values.nrows() != registry.len() {
            return Err(Error::RegistryConflict(format!(
                "{} value rows but {} registry entries",
                values.nrows(),
                registry.len()
            )));
        }
        if values.ncols() != quarters.len() {
            return Err(Error::Calendar(format!(
                "{} value columns but {} quarter labels",
                values.ncols(),
                quarters.len()
            )));
        }
        let mut seen = HashSet::with_capacity(registry.len());
        for meta in &registry {
            if meta.actor_id.is_empty() || meta.sector.is_empty() {
                return Err(Error::RegistryConflict("empty actor_id or sector".into()));
            }
            if !seen.insert(meta.actor_id.as_str()) {
                return Err(Error::RegistryConflict(format!("duplicate actor_id '{}'", meta.actor_id)));
            }
        }
        for w in quarters.windows(2) {
            if w[1].ordinal() != w[0].ordinal() + 1 {
                return Err(Error::Calendar(format!(
                    "quarters must be consecutive and increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some((i, j)) = first_non_finite(&values) {
            return Err(Error::UnbalancedPanel(format!(
                "non-finite value for actor '{}' at {}",
                registry[i].actor_id, quarters[j]
            )));
        }
        Ok(Self { values, quarters, registry, provenance: None })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn quarters(&self) -> &[Quarter] {
        &self.quarters
    }

    pub fn registry(&self) -> &[ActorMeta] {
        &self.registry
    }

    pub fn n_actors(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_quarters(&self) -> usize {
        self.values.ncols()
    }

    pub fn actor_ids(&self) -> impl Iterator<Item = &str> {
        self.registry.iter().map(|m| m.actor_id.as_str())
    }

    pub fn actor_index(&self, actor_id: &str) -> Option<usize> {
        self.registry.iter().position(|m| m.actor_id == actor_id)
    }

    pub fn quarter_index(&self, q: Quarter) -> Option<usize> {
        let first = self.quarters.first()?;
        let idx = q.ordinal() - first.ordinal();
        (idx >= 0 && (idx as usize) < self.quarters.len()).then_some(idx as usize)
    }

    /// Columns `start..end` as a new panel.
    pub fn slice_quarters(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.n_quarters() {
            return Err(Error::EmptySupport(format!(
                "quarter slice {start}..{end} of a {}-quarter panel",
                self.n_quarters()
            )));
        }
        let values = self.values.columns(start, end - start).into_owned();
        Ok(Panel {
            values,
            quarters: self.quarters[start..end].to_vec(),
            registry: self.registry.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Rows in the given order as a new panel.
    pub fn select_actors(&self, rows: &[usize]) -> Result<Panel> {
        if rows.is_empty() {
            return Err(Error::EmptySupport("actor selection is empty".into()));
        }
        let values = self.values.select_rows(rows.iter());
        let registry = rows.iter().map(|&r| self.registry[r].clone()).collect();
        Panel::new(values, self.quarters.clone(), registry)
    }

    /// Appends quarters to the right; used to probe causality.
    pub fn append_quarters(&self, extra: &DMatrix<f64>) -> Result<Panel> {
        if extra.nrows() != self.n_actors() {
            return Err(Error::Alignment { expected: self.n_actors(), got: extra.nrows() });
        }
        let t = self.n_quarters();
        let mut values = self.values.clone().resize_horizontally(t + extra.ncols(), 0.0);
        values.columns_mut(t, extra.ncols()).copy_from(extra);
        let last = *self.quarters.last().expect("panel has quarters");
        let mut quarters = self.quarters.clone();
        quarters.extend((1..=extra.ncols() as i64).map(|k| last.offset(k)));
        Panel::new(values, quarters, self.registry.clone())
    }

    pub(crate) fn replace_values(&self, values: DMatrix<f64>, quarters: Vec<Quarter>) -> Result<Panel> {
        let mut p = Panel::new(values, quarters, self.registry.clone())?;
        p.provenance = self.provenance.clone();
        Ok(p)
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}
