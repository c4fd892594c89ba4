//! Configuration, result tables, manifests and the experiment drivers for the
//! kicked anharmonic oscillator laboratory. The numerics live in `anharm-core`.
//!
//! A run is `config -> experiments::compute -> run directory`:
//!
//! ```no_run
//! use anharm_lab::config::{Experiment, RunConfig};
//!
//! let mut cfg = RunConfig::preset(Experiment::FlowNorm);
//! cfg.output_dir = "runs".into();
//! let outcome = anharm_lab::run(&cfg).unwrap();
//! println!("{} -> {}", outcome.manifest.experiment, outcome.dir.display());
//! ```

pub mod config;
pub mod constants;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod output;
pub mod tables;

use std::path::PathBuf;
use std::time::Instant;

pub use error::{LabError, LabResult};

use config::RunConfig;
use manifest::{RunManifest, CODE_VERSION};
use output::{timestamp, write_atomic, RunDir};

/// Environment variable capping the number of parallel jobs.
pub const JOBS_ENV: &str = "ANHARM_JOBS";

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: experiments::Report,
}

fn jobs_from_env() -> LabResult<Option<usize>> {
    match std::env::var(JOBS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(LabError::config(JOBS_ENV, format!("expected a positive integer, got `{v}`"))),
        },
    }
}

/// Run one experiment against the frozen constants and write its output tree.
pub fn run(cfg: &RunConfig) -> LabResult<Outcome> {
    let frozen = constants::frozen(cfg.l);
    run_with(cfg, frozen.as_ref())
}

pub fn run_with(cfg: &RunConfig, frozen: Option<&constants::Constants>) -> LabResult<Outcome> {
    cfg.validate()?;
    let started_at = timestamp();
    let clock = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs_from_env()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| LabError::Other(e.to_string()))?;
    let report = pool.install(|| experiments::compute(cfg, frozen))?;
    let wall_time_s = clock.elapsed().as_secs_f64();

    let mut dir = RunDir::create(&cfg.output_dir, cfg.experiment.name(), &started_at)?;
    for (rel, body) in &report.files {
        let path = dir.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
        write_atomic(&path, body.as_bytes())?;
        dir.written.push(rel.clone());
    }

    let mut constants = report.used.clone();
    for (k, v) in &report.fitted {
        constants.insert(format!("fitted.{k}"), *v);
    }
    let manifest = RunManifest {
        experiment: cfg.experiment.name().to_owned(),
        config: cfg.clone(),
        code_version: CODE_VERSION.to_owned(),
        started_at,
        wall_time_s,
        constants,
        constants_source: report.constants_source.clone(),
        checks: report.checks.clone(),
        tables: dir.written.clone(),
        notes: report.notes.clone(),
    };
    write_atomic(&dir.root.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(Outcome {
        dir: dir.root,
        manifest,
        report,
    })
}
