//! `diffreg`: command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 data error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use diffreg_core::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "diffreg", version, about = "Function-on-function differential regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo study over the configured scenarios.
    Simulate(Common),
    /// Fit at one λ and write coefficients and fitted responses.
    Fit(Common),
    /// Goodness-of-fit test with wild-bootstrap replicates.
    Test(Common),
    /// RSS / GCV over the λ grid.
    Sweep(Common),
    /// Generalized eigenvalues of the design against the kernel.
    Spectrum(Common),
    /// Trajectory CSV to a data set directory.
    Ingest(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file, or the name of a preset (table1..table4, figure1, era5).
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: config `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<diffreg_core::Error> for CliError {
    fn from(e: diffreg_core::Error) -> Self {
        use diffreg_core::Error as E;
        match e {
            E::Parse { .. } | E::EmptyData(_) | E::BasisMismatch { .. } | E::DegenerateDesign(_) | E::Csv(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Loaded, merged and validated configuration plus resolved CLI options.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

fn load(common: &Common) -> Result<Context, CliError> {
    let path = PathBuf::from(&common.config);
    let mut config = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json_str(&text)
    } else if diffreg_core::config::PRESETS.contains(&common.config.as_str()) {
        RunConfig::named_preset(&common.config)
    } else {
        return Err(CliError::Config(format!("{}: no such file or preset", common.config)));
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let out = common.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Context { config, out })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Fit(c) => ("fit", c),
        Command::Test(c) => ("test", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::Ingest(c) => ("ingest", c),
    };
    let ctx = load(common)?;
    match name {
        "simulate" => commands::simulate(&ctx),
        "fit" => commands::fit(&ctx),
        "test" => commands::test(&ctx),
        "sweep" => commands::sweep(&ctx),
        "spectrum" => commands::spectrum(&ctx),
        _ => commands::ingest(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffreg: {e}");
            ExitCode::from(e.code())
        }
    }
}
