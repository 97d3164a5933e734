//! `pnr`: simulate detector traces, analyze recorded ones, sweep low-pass
//! cutoffs and produce the full comparison report.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical
//! non-convergence (a partial report may still be written).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{parse_cutoffs, FileConfig, FilterOverride};
use crate::error::CliError;
use crate::manifest::{InputDigest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "pnr", version, about = "Photon-number resolution toolkit for series nanowire arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; nominal defaults when omitted.
    #[arg(long, value_name = "PATH", conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Rerun with the configuration recorded in a previous manifest.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// matched, none or lowpass:<hz>.
    #[arg(long, value_name = "SPEC")]
    filter: Option<FilterOverride>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write noisy single-pulse traces plus their ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of traces; overrides `simulate.traces`.
        #[arg(long)]
        traces: Option<usize>,
    },
    /// Filter trace files, extract amplitudes and fit the photon-number
    /// mixture.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// CSV with `file` and `arrival_s` columns; enables jitter output.
        #[arg(long, value_name = "PATH")]
        ref_times: Option<PathBuf>,
        /// Trace files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// S_12 and jitter against low-pass cutoff, with the matched filter as
    /// reference.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated Hz or `log:<lo>:<hi>:<count>`; overrides
        /// `sweep.cutoffs_hz`.
        #[arg(long, value_name = "LIST")]
        cutoffs: Option<String>,
    },
    /// SNR, spacing and jitter tables, unfiltered against filtered.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_context(common: &Common) -> Result<Context, CliError> {
    let mut inputs = Vec::new();
    let mut file = if let Some(path) = &common.manifest {
        let bytes = commands::read_input(path)?;
        inputs.push(InputDigest::of(path, &bytes));
        RunManifest::from_json(&bytes, path)?.config
    } else if let Some(path) = &common.config {
        let bytes = commands::read_input(path)?;
        inputs.push(InputDigest::of(path, &bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
        FileConfig::from_toml(&text, path)?
    } else {
        FileConfig::default()
    };
    file.apply_overrides(common.seed, common.filter);
    Ok(Context {
        file,
        inputs,
        out: common.out.clone(),
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PNR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("PNR_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("PNR_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { common, traces } => commands::simulate(&load_context(&common)?, traces),
        Command::Analyze {
            common,
            ref_times,
            inputs,
        } => {
            let ctx = load_context(&common)?;
            let refs = match ref_times {
                Some(p) => {
                    let bytes = commands::read_input(&p)?;
                    Some((p, bytes))
                }
                None => None,
            };
            commands::analyze(&ctx, &inputs, refs.as_ref())
        }
        Command::Sweep { common, cutoffs } => {
            let cutoffs = cutoffs.as_deref().map(parse_cutoffs).transpose()?;
            commands::sweep(&load_context(&common)?, cutoffs)
        }
        Command::Report { common } => commands::report(&load_context(&common)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
