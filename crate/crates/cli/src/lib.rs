//! Command-line front end: experiment configs in, plot-ready columnar files
//! and `key = value` reports out.

pub mod commands;
pub mod config;
pub mod error;
pub mod ini;
pub mod table;
pub mod units;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "magcav", version, about = "Coupled magnon / cavity-photon spectra, dynamics and fits")]
pub struct Cli {
    /// Experiment config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output file; overrides [output] path. Without either, writes to stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Progress messages on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coupling strength, spin count and regime from geometry.
    Design,
    /// Reflection |r|², phase and group delay versus frequency.
    Spectrum,
    /// |r|² over a bias-field by frequency raster, long format.
    Map,
    /// Cavity energy after excitation at the configured bias field.
    Rabi,
    /// Cavity energy after excitation at each configured bias field.
    Ringdown,
    /// Least-squares fit of a spectrum, field map or decay trace.
    Fit {
        /// Data file; overrides [task] data.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Coupling-regime label, cooperativity and polariton frequencies.
    Classify,
}

fn config_for(cli: &Cli, required: bool) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => load_config(path),
        None if required => Err(CliError::Usage("this command needs --config PATH".into())),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Runs one command and writes its output. A fit that did not converge
/// still writes its report before the error is returned.
pub fn run(cli: &Cli) -> Result<()> {
    let v = cli.verbose;
    let output = match &cli.command {
        Command::Design => commands::design(&config_for(cli, true)?, v)?,
        Command::Spectrum => commands::spectrum_cmd(&config_for(cli, true)?, v)?,
        Command::Map => commands::map_cmd(&config_for(cli, true)?, v)?,
        Command::Rabi => commands::rabi_cmd(&config_for(cli, true)?, v)?,
        Command::Ringdown => commands::ringdown_cmd(&config_for(cli, true)?, v)?,
        Command::Classify => commands::classify_cmd(&config_for(cli, true)?, v)?,
        Command::Fit { data } => commands::fit_cmd(&config_for(cli, false)?, data.as_deref(), v)?,
    };
    let cfg_out = match &cli.config {
        Some(path) if cli.out.is_none() => load_config(path)?.output.path,
        _ => None,
    };
    match cli.out.clone().or(cfg_out) {
        Some(path) => {
            std::fs::write(&path, &output.text)
                .map_err(|e| CliError::Parse(format!("{}: cannot write: {e}", path.display())))?;
            if v {
                eprintln!("magcav: wrote {}", path.display());
            }
        }
        None => {
            std::io::stdout().write_all(output.text.as_bytes())?;
        }
    }
    match output.status {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
