use std::path::PathBuf;
use std::process::ExitCode;

use anharm_lab::config::{Experiment, Overrides, RunConfig};
use anharm_lab::LabError;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    ClassicalGrowth,
    FlowNorm,
    SemiclassicalError,
    SobolevGrowth,
    Calibrate,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::ClassicalGrowth => Experiment::ClassicalGrowth,
            Command::FlowNorm => Experiment::FlowNorm,
            Command::SemiclassicalError => Experiment::SemiclassicalError,
            Command::SobolevGrowth => Experiment::SobolevGrowth,
            Command::Calibrate => Experiment::Calibrate,
        }
    }
}

/// Kicked anharmonic oscillator experiments.
///
/// Exit status: 0 when every check passes, 1 when a check fails (see
/// manifest.json), 2 on configuration or runtime errors. Set ANHARM_JOBS to
/// cap the number of parallel jobs.
#[derive(Debug, Parser)]
#[command(name = "anharm", version)]
struct Cli {
    experiment: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated hbar values (overrides `hbar_list`).
    #[arg(long, value_delimiter = ',')]
    hbar: Option<Vec<f64>>,
    /// Comma-separated Sobolev indices (overrides `r_list`).
    #[arg(long = "r", value_delimiter = ',')]
    r: Option<Vec<u32>>,
    /// Final time (overrides `t_max`).
    #[arg(long)]
    tmax: Option<f64>,
}

fn execute(cli: &Cli) -> Result<bool, LabError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let wanted = Experiment::from(cli.experiment);
    if cfg.experiment != wanted {
        return Err(LabError::config(
            "experiment",
            format!("config is for `{}` but `{wanted}` was requested", cfg.experiment),
        ));
    }
    let overrides = Overrides {
        out: cli.out.clone(),
        hbar: cli.hbar.clone(),
        r: cli.r.clone(),
        t_max: cli.tmax,
    };
    overrides.apply(&mut cfg)?;
    let outcome = anharm_lab::run(&cfg)?;
    for c in &outcome.manifest.checks {
        println!("{}", c.line());
    }
    println!("{}", outcome.dir.display());
    Ok(outcome.manifest.all_passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
