//! Run manifests: what was run, with which constants, and which checks passed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{LabError, LabResult};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Verdict of one acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured quantity the verdict is based on.
    pub value: f64,
    /// Human-readable statement of the requirement.
    pub requirement: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, value: f64, requirement: impl Into<String>) -> Self {
        // JSON has no infinities; a non-finite measurement is always a failure.
        let (passed, value) = if value.is_finite() {
            (passed, value)
        } else {
            (false, f64::MAX.copysign(value))
        };
        Self {
            name: name.into(),
            passed,
            value,
            requirement: requirement.into(),
        }
    }

    /// `value <= limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, value, format!("<= {limit:e}"))
    }

    /// `lo <= value <= hi`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, (lo..=hi).contains(&value), value, format!("in [{lo}, {hi}]"))
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{verdict} {} (value {:e}, required {})", self.name, self.value, self.requirement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: RunConfig,
    pub code_version: String,
    pub started_at: String,
    pub wall_time_s: f64,
    pub constants: BTreeMap<String, f64>,
    /// Where the constants used by the checks came from.
    pub constants_source: String,
    pub checks: Vec<Check>,
    /// Tables written next to the manifest.
    pub tables: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
