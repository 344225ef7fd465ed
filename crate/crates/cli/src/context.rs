use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context as _, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use blockmix::config::{Config, SeedStream};
use blockmix::panel::{load_panel, load_partition, BlockPartition, Panel};
use blockmix::Execution;

use crate::{Cli, DataArgs};

/// Effective config, output sink and execution mode for one command.
pub struct Context {
    pub cfg: Config,
    pub exec: Execution,
    out: PathBuf,
    command: &'static str,
    threads: usize,
    started: u64,
    outputs: Vec<OutputRecord>,
}

#[derive(Serialize)]
struct OutputRecord {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    bootstrap: u64,
    placebo: u64,
    geometry: u64,
    synth: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    config_sha256: String,
    config: &'a Config,
    seeds: Seeds,
    versions: Versions,
    threads: usize,
    started_unix: u64,
    finished_unix: u64,
    outputs: &'a [OutputRecord],
}

#[derive(Serialize)]
struct Versions {
    blockmix: &'static str,
    blockmix_cli: &'static str,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => Config::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => Config::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if cli.threads > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cli.threads)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let exec = if cli.threads == 1 { Execution::Sequential } else { Execution::Parallel };
        fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
        Ok(Self {
            cfg,
            exec,
            out: cli.out.clone(),
            command: cli.command.name(),
            threads: cli.threads,
            started: now(),
            outputs: Vec::new(),
        })
    }

    /// Folds command-line data overrides into the config.
    pub fn apply(&mut self, data: &DataArgs) -> Result<()> {
        if let Some(p) = &data.panel {
            self.cfg.data.panel = Some(p.clone());
        }
        if let Some(p) = &data.partition {
            self.cfg.data.partition = Some(p.clone());
        }
        let e = &mut self.cfg.evaluation;
        if let Some(t) = data.train_years {
            e.train_years = t;
        }
        if let Some((a, b)) = data.test_years {
            e.first_test_year = a;
            e.last_test_year = b;
        }
        if let Some(c) = data.convention {
            e.convention = c;
        }
        self.cfg.validate()?;
        Ok(())
    }

    pub fn panel(&self) -> Result<Panel> {
        let path = self.cfg.data.panel.as_ref().ok_or_else(|| anyhow!("no panel: pass --panel or set data.panel"))?;
        load_panel(path).with_context(|| format!("loading panel {}", path.display()))
    }

    pub fn partition(&self, panel: &Panel) -> Result<Option<BlockPartition>> {
        let Some(path) = &self.cfg.data.partition else {
            return Ok(None);
        };
        let part = load_partition(path).with_context(|| format!("loading partition {}", path.display()))?;
        part.validate(panel)?;
        Ok(Some(part))
    }

    pub fn require_partition(&self, panel: &Panel) -> Result<BlockPartition> {
        self.partition(panel)?.ok_or_else(|| anyhow!("this command needs --partition or data.partition"))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.outputs.push(OutputRecord { file: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest_<command>.json`, the only file carrying timestamps.
    pub fn finish(self) -> Result<()> {
        let cfg_text = self.cfg.to_toml_string()?;
        let manifest = Manifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            config_sha256: sha256_hex(cfg_text.as_bytes()),
            config: &self.cfg,
            seeds: Seeds {
                master: self.cfg.seed,
                bootstrap: self.cfg.stream_seed(SeedStream::Bootstrap),
                placebo: self.cfg.stream_seed(SeedStream::Placebo),
                geometry: self.cfg.stream_seed(SeedStream::Geometry),
                synth: self.cfg.stream_seed(SeedStream::Synth),
            },
            versions: Versions { blockmix: blockmix::VERSION, blockmix_cli: env!("CARGO_PKG_VERSION") },
            threads: self.threads,
            started_unix: self.started,
            finished_unix: now(),
            outputs: &self.outputs,
        };
        let path = self.out.join(format!("manifest_{}.json", self.command));
        write_text(&path, &serde_json::to_string_pretty(&manifest)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}
