use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use coldloop::config::CONFIG_DIR_ENV;
use coldloop::pipeline::{run, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Budget,
    Simulate,
    Sweep,
    Fit,
    Heterodyne,
    Design,
    Calibrate,
    Characterize,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Budget => Command::Budget,
            Cmd::Simulate => Command::Simulate,
            Cmd::Sweep => Command::Sweep,
            Cmd::Fit => Command::Fit,
            Cmd::Heterodyne => Command::Heterodyne,
            Cmd::Design => Command::Design,
            Cmd::Calibrate => Command::Calibrate,
            Cmd::Characterize => Command::Characterize,
        }
    }
}

/// Feedback-cooling loop toolkit: budgets, simulation, sweeps, fits,
/// heterodyne thermometry, filter design and calibration.
#[derive(Debug, Parser)]
#[command(name = "coldloop", version)]
#[command(after_help = format!("Config names that are not paths are looked up in ${CONFIG_DIR_ENV}."))]
struct Cli {
    command: Cmd,
    /// Scenario TOML file or name.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent jobs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory; the report is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data file for `fit`.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions { seed: cli.seed, workers: cli.workers.max(1), input: cli.input, config_dir: None };
    match run(cli.command.into(), &cli.config, &opts, cli.out.as_deref()) {
        Ok(r) => {
            print!("{}", r.report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("coldloop: {e}");
            ExitCode::FAILURE
        }
    }
}
