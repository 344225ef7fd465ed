//! Run configuration in TOML.
//!
//! Every field has a default, so an empty file is a valid config. The
//! `[model]` table lists the hyperparameter inventory one-to-one; the
//! defaults are the published values.

use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engines::{EngineParams, EngineSpec, KalmanParams, DEFAULT_ALPHA_MULTIPLIERS, DEFAULT_VAR_LAMBDA};
use crate::error::{Error, Result};
use crate::evaluation::{CompareOptions, LossBasis, R2Convention};
use crate::exec::task_rng;
use crate::mixture::{ArchitectureKind, ArchitectureSpec};
use crate::panel::RollingWindowSpec;
use crate::synth::SynthConfig;
use crate::validation::{PlaceboOptions, SweepGrid};

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Bootstrap = 1,
    Placebo = 2,
    Geometry = 3,
    Synth = 4,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub evaluation: EvaluationConfig,
    pub model: ModelConfig,
    pub inference: InferenceConfig,
    pub placebo: PlaceboConfig,
    pub sweep: SweepConfig,
    pub geometry: GeometryConfig,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub panel: Option<PathBuf>,
    pub partition: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub first_test_year: i32,
    pub last_test_year: i32,
    pub train_years: usize,
    pub convention: R2Convention,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { first_test_year: 2015, last_test_year: 2024, train_years: 5, convention: R2Convention::TestMean }
    }
}

impl EvaluationConfig {
    pub fn calendar(&self) -> RollingWindowSpec {
        RollingWindowSpec::years(self.first_test_year, self.last_test_year, self.train_years)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Global SVD rank K.
    pub global_k: usize,
    /// Fixed local rank; unset means `min(4, max(2, ⌊N_b/5⌋))`.
    pub local_k: Option<usize>,
    /// EWM half-life in quarters.
    pub ewm_half_life: f64,
    /// Ridge λ on the VAR coefficients.
    pub var_lambda: f64,
    /// Ridge α grid for the full ridge map, as multiples of N.
    pub ridge_alpha_multipliers: Vec<f64>,
    pub spectral_radius_clip: f64,
    pub kalman_q0: f64,
    pub kalman_lambda_q: f64,
    pub kalman_q_floor: f64,
    pub global_engine: Option<EngineSpec>,
    pub local_engine: Option<EngineSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let k = KalmanParams::default();
        Self {
            global_k: 8,
            local_k: None,
            ewm_half_life: 12.0,
            var_lambda: DEFAULT_VAR_LAMBDA,
            ridge_alpha_multipliers: DEFAULT_ALPHA_MULTIPLIERS.to_vec(),
            spectral_radius_clip: k.cap,
            kalman_q0: k.q0,
            kalman_lambda_q: k.lambda_q,
            kalman_q_floor: k.q_floor,
            global_engine: None,
            local_engine: None,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, kind: ArchitectureKind) -> ArchitectureSpec {
        ArchitectureSpec {
            kind,
            global_k: self.global_k,
            global_engine: self.global_engine.clone(),
            local_engine: self.local_engine.clone(),
            local_k: self.local_k,
            var_lambda: self.var_lambda,
            ridge_alpha_multipliers: self.ridge_alpha_multipliers.clone(),
            engine: EngineParams {
                half_life: self.ewm_half_life,
                kalman: KalmanParams {
                    q0: self.kalman_q0,
                    lambda_q: self.kalman_lambda_q,
                    q_floor: self.kalman_q_floor,
                    cap: self.spectral_radius_clip,
                },
            },
            zero_stage2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub loss_basis: LossBasis,
    pub dm_horizon: usize,
    pub hac_bandwidths: [usize; 3],
    pub block_lengths: [usize; 2],
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let o = CompareOptions::default();
        Self {
            bootstrap_resamples: o.resamples,
            level: o.level,
            loss_basis: o.loss_basis,
            dm_horizon: o.horizon,
            hac_bandwidths: o.hac_bandwidths,
            block_lengths: o.block_lengths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboConfig {
    pub permutations: usize,
    /// Actors held in place in stratified mode.
    pub fixed_actors: Vec<String>,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        Self { permutations: 1000, fixed_actors: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub train_years: Vec<usize>,
    pub local_ranks: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { train_years: vec![2, 3, 5], local_ranks: vec![2, 3, 4, 6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Subspace rank for principal angles.
    pub k: usize,
    /// Trailing window length in quarters.
    pub window: usize,
    /// Monte Carlo draws for the random-subspace baseline.
    pub draws: usize,
    /// Random same-size sub-panels per block in the matched control.
    pub control_draws: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { k: 4, window: 20, draws: 1000, control_draws: 200 }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::Parse { line, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.panel, &mut cfg.data.partition].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.evaluation;
        if e.first_test_year > e.last_test_year || e.train_years == 0 {
            return Err(Error::InvalidConfig("evaluation needs first ≤ last test year and train_years > 0".into()));
        }
        self.model.architecture(ArchitectureKind::M2).validate()?;
        let i = &self.inference;
        if i.bootstrap_resamples == 0 || !(i.level > 0.0 && i.level < 1.0) || i.dm_horizon == 0 {
            return Err(Error::InvalidConfig("inference needs resamples > 0, level in (0, 1) and horizon ≥ 1".into()));
        }
        if i.block_lengths.contains(&0) {
            return Err(Error::InvalidConfig("block lengths must be positive".into()));
        }
        if self.sweep.local_ranks.contains(&0) || self.sweep.train_years.contains(&0) {
            return Err(Error::InvalidConfig("sweep values must be positive".into()));
        }
        if self.geometry.k == 0 || self.geometry.window < 2 {
            return Err(Error::InvalidConfig("geometry needs k ≥ 1 and window ≥ 2".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    /// Seed for one consumer of randomness, derived from the master seed.
    pub fn stream_seed(&self, stream: SeedStream) -> u64 {
        task_rng(self.seed, stream as u64).next_u64()
    }

    pub fn compare_options(&self) -> CompareOptions {
        let i = &self.inference;
        CompareOptions {
            convention: self.evaluation.convention,
            loss_basis: i.loss_basis,
            resamples: i.bootstrap_resamples,
            level: i.level,
            seed: self.stream_seed(SeedStream::Bootstrap),
            horizon: i.dm_horizon,
            hac_bandwidths: i.hac_bandwidths,
            block_lengths: i.block_lengths,
        }
    }

    pub fn placebo_options(&self) -> PlaceboOptions {
        let fixed = &self.placebo.fixed_actors;
        PlaceboOptions {
            n_perms: self.placebo.permutations,
            seed: self.stream_seed(SeedStream::Placebo),
            fixed_actors: (!fixed.is_empty()).then(|| fixed.iter().cloned().collect()),
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        let e = &self.evaluation;
        SweepGrid {
            test_years: (e.first_test_year..=e.last_test_year).collect(),
            train_years: self.sweep.train_years.clone(),
            local_ranks: self.sweep.local_ranks.clone(),
        }
    }
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}
