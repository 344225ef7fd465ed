use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blockmix::evaluation::R2Convention;
use blockmix::mixture::ArchitectureKind;

mod commands;
mod context;

#[derive(Debug, Parser)]
#[command(name = "blockmix", version, about = "Two-stage panel forecasting with block-local residual models")]
pub struct Cli {
    /// TOML config; every field is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "BLOCKMIX_OUT_DIR", default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Panel CSV.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Partition CSV.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub train_years: Option<usize>,
    /// Inclusive range such as `2015..2024`.
    #[arg(long, value_parser = parse_years)]
    pub test_years: Option<(i32, i32)>,
    /// `test_mean` or `train_mean`.
    #[arg(long, value_parser = parse_convention)]
    pub convention: Option<R2Convention>,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[arg(long, value_parser = parse_arch, default_value = "m2")]
    pub arch: ArchitectureKind,
    #[arg(long, value_parser = parse_arch, default_value = "g1")]
    pub baseline: ArchitectureKind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rolling out-of-sample evaluation of one architecture.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_arch, default_value = "m2")]
        arch: ArchitectureKind,
    },
    /// Forecast comparison with the full inference battery.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_arch, default_value = "m2")]
        a: ArchitectureKind,
        #[arg(long, value_parser = parse_arch, default_value = "g1")]
        b: ArchitectureKind,
    },
    /// Every architecture against G1.
    Report {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Size-matched random partition test.
    Placebo {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        perms: Option<usize>,
        /// File of actor ids held in place, one per line.
        #[arg(long)]
        fixed: Option<PathBuf>,
    },
    /// Leave-one-window-out block selection.
    Lowo {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
        /// CSV with `candidate_id,actor_id` rows.
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Select on phase A, evaluate the frozen selection on phase B.
    Freeze {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_parser = parse_years)]
        phase_a: (i32, i32),
        #[arg(long, value_parser = parse_years)]
        phase_b: (i32, i32),
    },
    /// Single-block Δ for every candidate.
    Scan {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        candidates: PathBuf,
        /// Wins needed for selection; defaults to ⌈0.8·windows⌉.
        #[arg(long)]
        min_wins: Option<usize>,
    },
    /// Partition perturbations: moves, drops, unlocal, remainder.
    Perturb {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
        /// JSON list of variants; defaults to drop and unlocal per block.
        #[arg(long)]
        variants: Option<PathBuf>,
    },
    /// Subspace rotation diagnostics per block.
    Geodesic {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Training length × local rank grid.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pair: PairArgs,
    },
    /// Synthetic panel generation.
    Synth {
        /// `heterogeneous` (planted blocks) or `homogeneous` (null).
        #[arg(long, default_value = "heterogeneous")]
        preset: String,
        /// Null panel size.
        #[arg(long, default_value_t = 93)]
        n: usize,
        #[arg(long, default_value_t = 0.6)]
        rho: f64,
        #[arg(long, default_value_t = 84)]
        t: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
            Command::Report { .. } => "report",
            Command::Placebo { .. } => "placebo",
            Command::Lowo { .. } => "lowo",
            Command::Freeze { .. } => "freeze",
            Command::Scan { .. } => "scan",
            Command::Perturb { .. } => "perturb",
            Command::Geodesic { .. } => "geodesic",
            Command::Sweep { .. } => "sweep",
            Command::Synth { .. } => "synth",
        }
    }
}

fn parse_arch(s: &str) -> Result<ArchitectureKind, String> {
    s.parse().map_err(|e: blockmix::Error| e.to_string())
}

fn parse_convention(s: &str) -> Result<R2Convention, String> {
    match s.replace('-', "_").as_str() {
        "test_mean" => Ok(R2Convention::TestMean),
        "train_mean" => Ok(R2Convention::TrainMean),
        other => Err(format!("unknown convention '{other}' (test_mean or train_mean)")),
    }
}

fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: i32 = a.trim().parse().map_err(|_| format!("bad year in '{s}'"))?;
    let b: i32 = b.trim().parse().map_err(|_| format!("bad year in '{s}'"))?;
    if a > b {
        return Err(format!("empty year range '{s}'"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_ranges() {
        assert_eq!(parse_years("2015..2024"), Ok((2015, 2024)));
        assert_eq!(parse_years("2015..=2024"), Ok((2015, 2024)));
        assert_eq!(parse_years("2019"), Ok((2019, 2019)));
        assert!(parse_years("2020..2019").is_err());
        assert!(parse_years("x..2019").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
