//! `secpriv`: runs one experiment and writes its CSV table.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when
//! the computation itself fails.

mod config;
mod experiments;
mod output;

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use config::{parse_file, ExperimentConfig, FileConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(#[from] secpriv::Error),
    #[error("output: {0}")]
    Io(#[source] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "secpriv",
    version,
    about = "Attack detection and privacy experiments on interconnected systems"
)]
struct Args {
    /// pd-surface, detect, montecarlo, privacy-compare, tradeoff-map,
    /// noise-sweep, noise-design or powergrid-demo
    #[arg(long)]
    experiment: Option<String>,
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo batches per run
    #[arg(long)]
    trials: Option<usize>,
    /// False-alarm level of the test
    #[arg(long)]
    pfa: Option<f64>,
    /// Batch length T
    #[arg(long)]
    horizon: Option<usize>,
    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: Args) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_file(&text)?
        }
        None => FileConfig::default(),
    };
    let cfg = ExperimentConfig::resolve(
        file,
        Overrides {
            experiment: args.experiment,
            seed: args.seed,
            trials: args.trials,
            p_false_alarm: args.pfa,
            horizon: args.horizon,
            out: args.out,
        },
    )?;
    let table = experiments::run(&cfg)?;
    match &cfg.out {
        Some(path) => table.write(BufWriter::new(File::create(path).map_err(CliError::Io)?)),
        None => table.write(io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
