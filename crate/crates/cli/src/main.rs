mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use adepos::{Mode, RunConfig};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adepos", version, about = "Adaptive ensemble anomaly detection for bearing vibration data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one ensemble per bearing on its early life.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compute good-bearing lifetime errors and per-fold thresholds.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the power-saving controller over bearings' monitoring data.
    Monitor {
        #[command(flatten)]
        common: Common,
        /// Monitor only this bearing.
        #[arg(long)]
        bearing: Option<String>,
    },
    /// Accuracy and energy tables over a grid of sizes and widths.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Full leave-one-out evaluation with seed replicas.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Dump per-window features of every bearing.
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic bearing manifest.
    Synth {
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        healthy: usize,
        #[arg(long, default_value_t = 4)]
        degrading: usize,
        #[arg(long, default_value_t = 8000)]
        windows: usize,
        /// Fraction of life after which degrading bearings start failing.
        #[arg(long, default_value_t = 0.8)]
        onset: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

/// Flags shared by the pipeline commands; they override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Datapath width (8..=16).
    #[arg(long, value_parser = clap::value_parser!(u32).range(8..=16))]
    bits: Option<u32>,
    #[arg(long)]
    frac: Option<u32>,
    /// Hidden neurons per base learner.
    #[arg(long = "l")]
    hidden: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Monitor in floating point.
    #[arg(long)]
    float: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident => $g:ident),*) => {$(if let Some(v) = self.$f.clone() { c.$g = v; })*};
        }
        take!(bits => bits, hidden => hidden, n_max => n_max, k => k, c => c, seed => seed, out => out, replicas => replicas, mode => mode);
        if let Some(m) = &self.manifest {
            c.manifest = Some(m.clone());
        }
        if let Some(f) = self.frac {
            c.frac = Some(f);
        }
        if self.float {
            c.float_inference = true;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => commands::train(&common.resolve()?),
        Command::Calibrate { common } => commands::calibrate(&common.resolve()?),
        Command::Monitor { common, bearing } => commands::monitor(&common.resolve()?, bearing.as_deref()),
        Command::Sweep { common } => commands::sweep(&common.resolve()?),
        Command::Report { common } => commands::report(&common.resolve()?),
        Command::Features { common } => commands::features(&common.resolve()?),
        Command::Synth {
            out,
            healthy,
            degrading,
            windows,
            onset,
            seed,
        } => commands::synth(&out, healthy, degrading, windows, onset, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
