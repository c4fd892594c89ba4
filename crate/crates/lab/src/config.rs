//! Run configuration: one JSON document per run, scalar overrides from the
//! command line, and validation before any computation starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anharm_core::flow::HessianConvention;
use anharm_core::quantum::SplittingScheme;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ClassicalGrowth,
    FlowNorm,
    SemiclassicalError,
    SobolevGrowth,
    Calibrate,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Self::ClassicalGrowth,
        Self::FlowNorm,
        Self::SemiclassicalError,
        Self::SobolevGrowth,
        Self::Calibrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ClassicalGrowth => "classical-growth",
            Self::FlowNorm => "flow-norm",
            Self::SemiclassicalError => "semiclassical-error",
            Self::SobolevGrowth => "sobolev-growth",
            Self::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| LabError::config("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Strang,
    Yoshida4,
}

impl From<Scheme> for SplittingScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Strang => SplittingScheme::Strang,
            Scheme::Yoshida4 => SplittingScheme::Yoshida4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hessian {
    #[default]
    Exact,
    Literal,
}

impl From<Hessian> for HessianConvention {
    fn from(h: Hessian) -> Self {
        match h {
            Hessian::Exact => HessianConvention::Exact,
            Hessian::Literal => HessianConvention::Literal,
        }
    }
}

fn default_d() -> usize {
    1
}
fn default_one() -> f64 {
    1.0
}
fn default_checkpoint_interval() -> f64 {
    0.25
}
fn default_growth_window_start() -> f64 {
    100.0
}
fn default_trajectory_stride() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub l: u32,
    #[serde(default = "default_d")]
    pub d: usize,
    pub hbar_list: Vec<f64>,
    pub r_list: Vec<u32>,
    pub t_max: f64,
    pub tol: f64,
    pub kappa: f64,
    pub output_dir: PathBuf,
    /// Always `true`: nothing in the pipeline draws random numbers.
    pub seedless: bool,
    /// Multiplier on the default quantum time step.
    #[serde(default = "default_one")]
    pub dt_factor: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub hessian: Hessian,
    /// Spacing of quantum checkpoints.
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: f64,
    /// Lower end of the `E(t) / log^2(2+t)` window.
    #[serde(default = "default_growth_window_start")]
    pub growth_window_start: f64,
    /// Every how many accepted steps a trajectory row is written.
    #[serde(default = "default_trajectory_stride")]
    pub trajectory_stride: usize,
}

impl RunConfig {
    /// Reference settings for each experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            l: 2,
            d: 1,
            hbar_list: vec![1e-3],
            r_list: vec![1, 2],
            t_max: 1e5,
            tol: 1e-10,
            kappa: 1.0,
            output_dir: PathBuf::from("runs"),
            seedless: true,
            dt_factor: 1.0,
            scheme: Scheme::Strang,
            hessian: Hessian::Exact,
            checkpoint_interval: 0.25,
            growth_window_start: 100.0,
            trajectory_stride: 100,
        };
        match experiment {
            Experiment::ClassicalGrowth => Self { r_list: vec![], ..base },
            Experiment::FlowNorm => Self {
                t_max: 30.0,
                tol: 1e-12,
                r_list: vec![],
                ..base
            },
            Experiment::SemiclassicalError => Self {
                hbar_list: vec![1e-2, 3e-3, 1e-3, 3e-4],
                r_list: vec![0, 1],
                t_max: 5.0,
                tol: 1e-12,
                ..base
            },
            Experiment::SobolevGrowth => Self {
                t_max: 16.0,
                tol: 1e-12,
                ..base
            },
            Experiment::Calibrate => Self { tol: 1e-12, ..base },
        }
    }

    pub fn from_json(text: &str) -> LabResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |field: &str, reason: &str| Err(LabError::config(field, reason));
        if !(2..=32).contains(&self.l) {
            return bad("l", "must be an integer in 2..=32");
        }
        if self.d < 1 || self.d > 8 {
            return bad("d", "must be in 1..=8");
        }
        if self.hbar_list.is_empty() {
            return bad("hbar_list", "must not be empty");
        }
        if self.hbar_list.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return bad("hbar_list", "every value must lie in (0, 1]");
        }
        if self.r_list.iter().any(|&r| r > 8) {
            return bad("r_list", "Sobolev indices above 8 are not supported");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max", "must be positive and finite");
        }
        if !(1e-13..=1e-6).contains(&self.tol) {
            return bad("tol", "must lie in [1e-13, 1e-6]");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa", "must lie in (0, 1]");
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir", "must not be empty");
        }
        if !self.seedless {
            return bad("seedless", "must be true; the pipeline is deterministic");
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 4.0) {
            return bad("dt_factor", "must lie in (0, 4]");
        }
        if !(self.checkpoint_interval > 0.0 && self.checkpoint_interval.is_finite()) {
            return bad("checkpoint_interval", "must be positive");
        }
        if !(self.growth_window_start >= 0.0 && self.growth_window_start.is_finite()) {
            return bad("growth_window_start", "must be non-negative");
        }
        if self.trajectory_stride == 0 {
            return bad("trajectory_stride", "must be at least 1");
        }
        match self.experiment {
            Experiment::SemiclassicalError => {
                if self.hbar_list.len() < 3 {
                    return bad("hbar_list", "semiclassical-error needs at least three values");
                }
                if self.d != 1 {
                    return bad("d", "the grid solver is one-dimensional");
                }
            }
            Experiment::SobolevGrowth => {
                if self.d != 1 {
                    return bad("d", "the grid solver is one-dimensional");
                }
                if self.r_list.is_empty() {
                    return bad("r_list", "must not be empty");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Scalar and list overrides given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub hbar: Option<Vec<f64>>,
    pub r: Option<Vec<u32>>,
    pub t_max: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> LabResult<()> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(h) = &self.hbar {
            cfg.hbar_list = h.clone();
        }
        if let Some(r) = &self.r {
            cfg.r_list = r.clone();
        }
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        cfg.validate()
    }
}
