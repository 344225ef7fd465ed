//! Frozen scenarios shared by the acceptance suite.
//!
//! Every seed and size used by the end-to-end checks lives here so the
//! suite and any re-run from the command line agree on the inputs.

use blockmix::panel::{BlockPartition, Panel, RollingWindowSpec};
use blockmix::synth::{generate_heterogeneous_panel, generate_homogeneous_panel, BlockConfig, SynthConfig};
use blockmix::Result;

/// Seed of the planted 93-actor panel and of its homogeneous null.
pub const PLANTED_SEED: u64 = 7;
pub const PLACEBO_PERMS: usize = 200;
pub const PLACEBO_SEED: u64 = 1;
/// Seeds of the planted ensemble used for the training-length comparison.
pub const ENSEMBLE_SEEDS: std::ops::Range<u64> = 0..10;

pub const FIRST_TEST_YEAR: i32 = 2015;
pub const LAST_TEST_YEAR: i32 = 2024;

/// Ten test years, 2015 through 2024.
pub fn calendar(train_years: usize) -> RollingWindowSpec {
    RollingWindowSpec::years(FIRST_TEST_YEAR, LAST_TEST_YEAR, train_years)
}

/// Planted heterogeneous panel and its true partition.
pub fn planted(seed: u64) -> Result<(Panel, BlockPartition)> {
    let cfg = SynthConfig::heterogeneous_93(seed);
    let panel = generate_heterogeneous_panel(&cfg)?;
    let partition = cfg.partition(&panel)?;
    Ok((panel, partition))
}

/// Homogeneous AR(1) panel of the same shape, carrying the planted
/// panel's partition as a label with no signal behind it.
pub fn null_panel(seed: u64) -> Result<(Panel, BlockPartition)> {
    let cfg = SynthConfig::heterogeneous_93(seed);
    let panel = generate_homogeneous_panel(seed, cfg.n_actors(), 0.6, cfg.t)?;
    let partition = cfg.partition(&panel)?;
    Ok((panel, partition))
}

/// 20 actors: 4 macro, 16 firms, two planted blocks of 6 and 5.
pub fn small_config(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::heterogeneous_93(seed);
    cfg.layers[0].count = 4;
    cfg.layers[1].count = 16;
    cfg.blocks = vec![
        BlockConfig { id: "b1".into(), actors: (4, 10), factor_k: 2, factor_rho: 0.8, loading_scale: 0.5 },
        BlockConfig { id: "b2".into(), actors: (10, 15), factor_k: 1, factor_rho: 0.8, loading_scale: 0.5 },
    ];
    cfg
}

pub fn small(seed: u64) -> Result<(Panel, BlockPartition)> {
    let cfg = small_config(seed);
    let panel = generate_heterogeneous_panel(&cfg)?;
    let partition = cfg.partition(&panel)?;
    Ok((panel, partition))
}
