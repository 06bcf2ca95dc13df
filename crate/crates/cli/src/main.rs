//! `icsr run <config>`: runs one experiment and prints its manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icsr::experiments::{run_experiment, ExperimentConfig};
use icsr::Error;

#[derive(Parser)]
#[command(name = "icsr", version, about = "In-context sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Replace the seed list by consecutive seeds starting here.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multiplier on training epochs and test-set sizes.
        #[arg(long = "desk-scale")]
        desk_scale: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Numeric { .. } | Error::Training { .. } => 3,
        Error::Io { .. } => 1,
    }
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>, desk_scale: Option<f64>) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seeds = cfg.seeds.rebased(s);
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(d) = desk_scale {
        cfg.desk_scale = d;
    }
    let manifest = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out, desk_scale } => run(config, seed, out, desk_scale),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("icsr: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
