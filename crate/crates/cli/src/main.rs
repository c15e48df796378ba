//! `pulmo`: heart/lung sound separation from the command line.
//!
//! Exit status is 0 on success, 1 for runtime or data errors and 2 for usage errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<pulmo_core::Error> for CliError {
    fn from(e: pulmo_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pulmo", version, about = "Blind separation of heart and lung sounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mix a target and a noise recording at a given SNR.
    Mix(MixArgs),
    /// Separate a mixture into heart and lung estimates.
    Separate(SeparateArgs),
    /// Score two estimates against two references (SDR/SIR/SAR).
    Eval(EvalArgs),
    /// Write synthetic heart-like and lung-like recordings.
    Synth(SynthArgs),
    /// Dump latent trajectories, modulation spectra, labels and a PCA scatter.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub noise: PathBuf,
    /// Target-to-noise ratio in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// One or more mixtures; with several, each gets a subdirectory named after it.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write latents, modulation spectra, labels, masks and spectrogram images.
    #[arg(long)]
    pub dump: bool,
    /// Files separated concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: config::RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub est_heart: PathBuf,
    #[arg(long)]
    pub est_lung: PathBuf,
    #[arg(long)]
    pub ref_heart: PathBuf,
    #[arg(long)]
    pub ref_lung: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Cut all four signals to the shortest one instead of failing.
    #[arg(long)]
    pub trim_to_shortest: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Heart seed; the lung uses seed + 1. Falls back to $PULMO_SEED, then 17.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1.2)]
    pub heart_rate: f64,
    #[arg(long, default_value_t = 90.0)]
    pub carrier: f64,
    #[arg(long, default_value_t = 0.04)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.25)]
    pub lung_rate: f64,
    #[arg(long, default_value_t = 150.0)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 900.0)]
    pub band_hi: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub run: config::RunFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Mix(a) => commands::mix(a),
        Command::Separate(a) => commands::separate_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pulmo: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
