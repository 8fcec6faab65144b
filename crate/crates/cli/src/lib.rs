//! Command-line front end: config ingestion, subcommand dispatch and
//! deterministic artifact output.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Overrides};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "iongate", version, about = "Segmented XX gate design for ion chains")]
pub struct Cli {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct PairArgs {
    /// 1-based ion indices, e.g. `5,6`.
    #[arg(long, value_parser = parse_pair)]
    pub pair: Option<[usize; 2]>,
    /// Number of amplitude segments.
    #[arg(long)]
    pub nseg: Option<usize>,
    /// Gate time in seconds.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Detuning in Hz.
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equilibrium positions and transverse modes.
    Crystal,
    /// Design one pair.
    Design(PairArgs),
    /// Design every configured pair.
    Suite,
    /// Sensitivity scan of one designed pair.
    Scan(PairArgs),
    /// Analytic error budget and optional requirement check.
    Budget {
        /// Gate time in seconds.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Brute-force check of a small scenario.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Repeated-gate accumulation for one pair.
    Repeat {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|e| format!("bad ion index {a:?}: {e}"))?,
            b.parse().map_err(|e| format!("bad ion index {b:?}: {e}"))?,
        ]),
        _ => Err(format!("expected i,j, got {s:?}")),
    }
}

fn overrides(args: &PairArgs, seed: Option<u64>) -> Overrides {
    Overrides {
        pair: args.pair,
        n_seg: args.nseg,
        tau: args.tau,
        mu_hz: args.mu,
        seed,
    }
}

fn context(cli: &Cli, overrides: Overrides) -> CliResult<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let loaded = config::load(path)?;
    let out = cli.out.clone().unwrap_or_else(|| loaded.config.output_dir.clone());
    Ok(Context {
        config: loaded.config,
        sha256: loaded.sha256,
        out,
        overrides,
    })
}

/// Execute a parsed command line and return the artifacts written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Crystal => commands::crystal(&context(cli, Overrides::default())?),
        Command::Design(a) => commands::design(&context(cli, overrides(a, None))?),
        Command::Suite => commands::suite(&context(cli, Overrides::default())?),
        Command::Scan(a) => commands::scan_cmd(&context(cli, overrides(a, None))?),
        Command::Budget { tau } => commands::budget(&context(cli, Overrides { tau: *tau, ..Overrides::default() })?),
        Command::Oracle { scenario } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::oracle(scenario, &out)
        }
        Command::Repeat { pair, seed } => commands::repeat(&context(cli, overrides(pair, *seed))?),
    }
}
