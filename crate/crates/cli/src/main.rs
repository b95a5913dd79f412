//! `bladefl` — run federated-learning-on-a-blockchain experiments, sweep
//! parameter grids, evaluate the analytic bound, check datasets, and verify
//! ledgers.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use bladefl_cli::commands;

#[derive(Parser)]
#[command(version, about = "Blockchain-assisted federated learning: simulator and analysis harness", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Execute one experiment from a JSON config
    Run {
        /// Path to the run config (flat JSON, unknown keys rejected)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run an experiment grid and aggregate mean curves per series
    Sweep {
        /// Path to the sweep spec: a run config plus k_values, m_values,
        /// sigma2_values, repetitions, out_dir
        #[arg(long)]
        spec: PathBuf,
        /// Override the spec's output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for grid points (0 = one per core)
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Evaluate analytic bound curves from a calibration file
    Bound {
        /// Path to the calibration JSON
        #[arg(long)]
        calibration: PathBuf,
        /// Optional sweep spec supplying the M and sigma2 axes
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory; mean curves from earlier sweeps found here
        /// are overlaid against the bound
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check dataset files on disk; offline, never downloads
    FetchData {
        /// Dataset name
        #[arg(default_value = "mnist")]
        name: String,
        /// Data directory (default: $BLADEFL_DATA, then data/mnist)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify an on-disk block ledger
    VerifyLedger {
        /// Path to a ledger.bin
        ledger: PathBuf,
        /// Run config supplying the mining difficulty (default: the
        /// config.json beside the ledger, if present)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Commands::Run { config, seed, out } => commands::cmd_run(&config, seed, &out),
        Commands::Sweep { spec, out, parallel } => {
            commands::cmd_sweep(&spec, out.as_deref(), parallel)
        }
        Commands::Bound { calibration, spec, out } => {
            commands::cmd_bound(&calibration, spec.as_deref(), &out)
        }
        Commands::FetchData { name, out } => commands::cmd_fetch_data(&name, out.as_deref()),
        Commands::VerifyLedger { ledger, config } => {
            commands::cmd_verify_ledger(&ledger, config.as_deref())
        }
    }
}
