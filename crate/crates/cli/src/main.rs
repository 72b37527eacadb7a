//! `twinbeam`: simulate twin-beam image stacks and analyse them.
//!
//! Commands communicate through files under `--out`; see the exit-code table
//! in `error.rs`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::RunConfig;
use error::{fail, CliResult, Stage};

#[derive(Parser)]
#[command(
    name = "twinbeam",
    version,
    about = "Twin-beam EPR and spatial-squeezing toolkit"
)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output (and input stack) directory.
    #[arg(long, global = true, default_value = "twinbeam-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "TWINBEAM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write near/far TBIM stacks and a checksum manifest.
    Simulate,
    /// Correlation maps, Gaussian fits and the EPR product per axis.
    AnalyzeEpr,
    /// Binned noise ratio curves for each field present.
    AnalyzeNr,
    /// Confidence level against the number of images per group.
    Confidence,
    /// Spectral noise-ratio prediction checked against a time-domain simulation.
    Spectral,
    /// Summarize the reports found in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(Stage::Config, format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| fail(Stage::Config, format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fail(Stage::Config, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail(Stage::Config, e.to_string()))?;
    }
    let ctx = Ctx::new(load_config(cli)?, cli.out.clone());
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::AnalyzeEpr => commands::analyze_epr(&ctx),
        Command::AnalyzeNr => commands::analyze_nr(&ctx),
        Command::Confidence => commands::confidence(&ctx),
        Command::Spectral => {
            if commands::spectral(&ctx)? {
                Ok(())
            } else {
                Err(fail(
                    Stage::SpectralDisagreement,
                    "prediction and time-domain estimate disagree (see spectral_report.json)",
                ))
            }
        }
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.code())
        }
    }
}
