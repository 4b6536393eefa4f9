use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spsconv_cli::commands::{self, default_labels_path};
use spsconv_cli::config::{self, Config};
use spsconv_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "spsconv",
    version,
    about = "Sparse 3D convolution with spatial pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its foreground label sidecar.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Label file; defaults to `<out>.labels`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Voxelize a point file to CSV.
    Voxelize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run baseline and pruned backbones and report per-stage statistics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// FLOPs over a list of pruning ratios.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "0,0.1,0.3,0.5,0.7,0.9")]
        ratios: String,
    },
    /// Foreground fraction at the input and after every stage.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

fn load(common: &Common) -> Result<Config> {
    Ok(config::load(&common.config)?.with_seed(common.seed))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, labels } => {
            let cfg = load(&common)?;
            let out = common
                .out
                .as_deref()
                .ok_or_else(|| CliError::Config("synth needs --out".into()))?;
            let labels = labels.unwrap_or_else(|| default_labels_path(out));
            let summary = commands::cmd_synth(&cfg, out, &labels)?;
            eprintln!(
                "wrote {} points ({} foreground, fraction {}) to {}",
                summary.points,
                summary.foreground_points,
                summary.foreground_fraction,
                out.display()
            );
            Ok(())
        }
        Command::Voxelize { common, input } => {
            let cfg = load(&common)?;
            emit(
                common.out.as_deref(),
                &commands::cmd_voxelize(&cfg, &input)?,
            )
        }
        Command::Run { common, input } => {
            let cfg = load(&common)?;
            emit(common.out.as_deref(), &commands::cmd_run(&cfg, &input)?)
        }
        Command::Sweep {
            common,
            input,
            ratios,
        } => {
            let cfg = load(&common)?;
            let ratios = config::parse_ratios(&ratios)?;
            emit(
                common.out.as_deref(),
                &commands::cmd_sweep(&cfg, &input, &ratios)?,
            )
        }
        Command::Stats {
            common,
            input,
            labels,
        } => {
            let cfg = load(&common)?;
            emit(
                common.out.as_deref(),
                &commands::cmd_stats(&cfg, &input, &labels)?,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
