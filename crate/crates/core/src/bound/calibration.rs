//! Frozen bound constants, loadable from JSON.
//!
//! Estimation ([`super::estimate`]) produces starting values; a calibration
//! file freezes the reviewed numbers so sweeps and block-count optimization
//! are reproducible without re-running the estimation pipeline. The file
//! carries per-field notes about where each number came from, because the
//! difference between a measured constant and a hand-adjusted one matters
//! when interpreting the curves.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BoundParams;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Dataset these constants were fit against (e.g. "mnist").
    pub dataset: String,
    /// The frozen parameter set that sweeps and optimization read.
    pub params: BoundParams,
    /// Per-field provenance: measured, derived, or hand-adjusted, and how.
    #[serde(default)]
    pub sources: BTreeMap<String, String>,
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Calibration = serde_json::from_str(text)?;
        cal.params.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
