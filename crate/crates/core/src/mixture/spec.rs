use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engines::{EngineParams, EngineSpec, DEFAULT_ALPHA_MULTIPLIERS, DEFAULT_VAR_LAMBDA};
use crate::error::{Error, Result};

/// Named forecaster configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    /// Pooled Stage 1 only.
    G0,
    /// Pooled Stage 1 plus the global residual model for every actor.
    G1,
    /// Global residual model for the remainder, nothing for local blocks.
    S1,
    /// Block-specific Stage 1 only.
    Ba,
    /// Block-specific Stage 1 plus block-local residual models.
    BaM2,
    /// Pooled Stage 1, local full ridge per local block, global for the remainder.
    M1,
    /// Pooled Stage 1, local PCA + ridge VAR per local block, global for the remainder.
    M2,
    /// Equal-weighted mean of G1 and BA.
    Ens,
    /// Per-actor AR(1) reference model.
    Ar1,
    /// Single-stage ridge with block-dummy interactions.
    Ssr,
}

impl ArchitectureKind {
    pub const TABLE: [ArchitectureKind; 8] = [
        ArchitectureKind::G0,
        ArchitectureKind::Ba,
        ArchitectureKind::G1,
        ArchitectureKind::Ens,
        ArchitectureKind::S1,
        ArchitectureKind::BaM2,
        ArchitectureKind::M1,
        ArchitectureKind::M2,
    ];

    pub fn needs_partition(self) -> bool {
        !matches!(self, ArchitectureKind::G0 | ArchitectureKind::G1 | ArchitectureKind::Ar1)
    }

    pub fn slug(self) -> &'static str {
        match self {
            ArchitectureKind::G0 => "g0",
            ArchitectureKind::G1 => "g1",
            ArchitectureKind::S1 => "s1",
            ArchitectureKind::Ba => "ba",
            ArchitectureKind::BaM2 => "ba_m2",
            ArchitectureKind::M1 => "m1",
            ArchitectureKind::M2 => "m2",
            ArchitectureKind::Ens => "ens",
            ArchitectureKind::Ar1 => "ar1",
            ArchitectureKind::Ssr => "ssr",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug().to_ascii_uppercase())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "g0" => ArchitectureKind::G0,
            "g1" => ArchitectureKind::G1,
            "s1" => ArchitectureKind::S1,
            "ba" => ArchitectureKind::Ba,
            "ba_m2" | "bam2" => ArchitectureKind::BaM2,
            "m1" => ArchitectureKind::M1,
            "m2" => ArchitectureKind::M2,
            "ens" => ArchitectureKind::Ens,
            "ar1" => ArchitectureKind::Ar1,
            "ssr" => ArchitectureKind::Ssr,
            other => return Err(Error::InvalidConfig(format!("unknown architecture '{other}'"))),
        };
        Ok(k)
    }
}

/// Local rank rule `K_b = min(4, max(2, ⌊N_b/5⌋))`.
pub fn local_rank(n_b: usize) -> usize {
    (n_b / 5).clamp(2, 4)
}

/// An architecture plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    pub global_k: usize,
    /// Global residual engine; `None` means PCA + ridge VAR at `global_k`.
    pub global_engine: Option<EngineSpec>,
    /// Local engine family for M2 and BA_M2; its rank is replaced by the
    /// local rank rule unless `local_k` is set.
    pub local_engine: Option<EngineSpec>,
    /// Fixed local rank overriding the rule.
    pub local_k: Option<usize>,
    pub var_lambda: f64,
    pub ridge_alpha_multipliers: Vec<f64>,
    pub engine: EngineParams,
    /// Replace every fitted Stage-2 map by zero.
    pub zero_stage2: bool,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            kind: ArchitectureKind::M2,
            global_k: 8,
            global_engine: None,
            local_engine: None,
            local_k: None,
            var_lambda: DEFAULT_VAR_LAMBDA,
            ridge_alpha_multipliers: DEFAULT_ALPHA_MULTIPLIERS.to_vec(),
            engine: EngineParams::default(),
            zero_stage2: false,
        }
    }
}

impl ArchitectureSpec {
    pub fn new(kind: ArchitectureKind) -> Self {
        Self { kind, ..Default::default() }
    }

    /// Same hyperparameters, different architecture.
    pub fn with_kind(&self, kind: ArchitectureKind) -> Self {
        Self { kind, ..self.clone() }
    }

    pub fn global_engine_spec(&self) -> EngineSpec {
        self.global_engine
            .clone()
            .unwrap_or(EngineSpec::PcaRidgeVar { k: self.global_k, lambda: self.var_lambda })
    }

    pub fn local_rank_for(&self, n_b: usize) -> usize {
        self.local_k.unwrap_or_else(|| local_rank(n_b))
    }

    /// Engine fitted on a local block of `n_b` actors.
    pub fn local_engine_spec(&self, n_b: usize) -> EngineSpec {
        match self.kind {
            ArchitectureKind::M1 => EngineSpec::RidgeFull { alpha_multipliers: self.ridge_alpha_multipliers.clone() },
            _ => {
                let k = self.local_rank_for(n_b);
                match &self.local_engine {
                    Some(e) => e.with_rank(k),
                    None => EngineSpec::PcaRidgeVar { k, lambda: self.var_lambda },
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_k == 0 {
            return Err(Error::InvalidConfig("global_k must be positive".into()));
        }
        if self.local_k == Some(0) {
            return Err(Error::InvalidConfig("local_k must be positive".into()));
        }
        if !(self.var_lambda >= 0.0) {
            return Err(Error::InvalidConfig("var_lambda must be non-negative".into()));
        }
        if self.ridge_alpha_multipliers.is_empty() || self.ridge_alpha_multipliers.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidConfig("ridge_alpha_multipliers must be non-empty and non-negative".into()));
        }
        if !(self.engine.half_life > 0.0) {
            return Err(Error::InvalidConfig("half_life must be positive".into()));
        }
        Ok(())
    }
}
