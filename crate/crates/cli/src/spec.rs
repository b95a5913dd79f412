//! Experiment grids: one base run configuration plus sweep axes.
//!
//! The on-disk format is a single flat JSON object — the base run fields
//! exactly as [`SimConfig`] accepts them, with the grid keys `k_values`,
//! `m_values`, `sigma2_values`, `repetitions`, and `out_dir` mixed in at
//! the same level. Parsing peels the grid keys off and hands everything
//! that remains to `SimConfig`'s strict parser, so a misspelled key is
//! rejected no matter which half of the schema it was aimed at.
//!
//! An empty axis means "don't sweep this": the base config's own value is
//! used. A spec with all axes empty and one repetition is exactly one run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use bladefl_core::error::{Error, Result};
use bladefl_core::sim::SimConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    /// Block counts to sweep; empty means just `base.blocks`.
    pub k_values: Vec<u32>,
    /// Lazy-client counts to sweep; empty means just `base.lazy_clients`.
    pub m_values: Vec<u32>,
    /// Disguising-noise variances to sweep; empty means just `base.sigma2`.
    pub sigma2_values: Vec<f64>,
    /// Independent repetitions per grid point; repetition `r` runs with
    /// seed `base.seed + r`.
    pub repetitions: u32,
    /// Where artifacts land, unless overridden on the command line.
    pub out_dir: PathBuf,
}

/// One cell of the grid. `index` is the position in the deterministic
/// (K, M, σ², repetition) enumeration; results are merged in that order no
/// matter which worker finished first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub k: u32,
    pub m: u32,
    pub sigma2: f64,
    pub rep: u32,
}

fn take_key<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.remove(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| Error::Config(format!("spec key {key}: {e}"))),
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut obj: Map<String, Value> = serde_json::from_str(text)?;
        let k_values: Vec<u32> = take_key(&mut obj, "k_values")?.unwrap_or_default();
        let m_values: Vec<u32> = take_key(&mut obj, "m_values")?.unwrap_or_default();
        let sigma2_values: Vec<f64> = take_key(&mut obj, "sigma2_values")?.unwrap_or_default();
        let repetitions: u32 = take_key(&mut obj, "repetitions")?.unwrap_or(1);
        let out_dir: PathBuf = take_key::<String>(&mut obj, "out_dir")?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));
        // Everything left is the base config; SimConfig's parser rejects
        // unknown keys and validates the fields it does know.
        let base = SimConfig::from_json(&Value::Object(obj).to_string())?;
        let spec = Self { base, k_values, m_values, sigma2_values, repetitions, out_dir };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Every grid point must be individually runnable before anything runs:
    /// a sweep that dies at point 37 of 108 wastes everything before it.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        for (name, axis) in [("k_values", &self.k_values), ("m_values", &self.m_values)] {
            let mut sorted = axis.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != axis.len() {
                return Err(Error::Config(format!("{name} contains duplicates")));
            }
        }
        // a duplicated grid point would race two workers onto one record
        let mut s2s = self.sigma2_values.clone();
        s2s.sort_by(f64::total_cmp);
        s2s.dedup();
        if s2s.len() != self.sigma2_values.len() {
            return Err(Error::Config("sigma2_values contains duplicates".into()));
        }
        for &k in self.effective_ks() {
            for &m in self.effective_ms() {
                for &s2 in self.effective_sigma2s() {
                    let cfg = self.config_for(k, m, s2, 0);
                    cfg.validate().map_err(|e| {
                        Error::Config(format!("grid point K={k} M={m} sigma2={s2}: {e}"))
                    })?;
                    cfg.effective_tau().map_err(|e| {
                        Error::Config(format!("grid point K={k} M={m} sigma2={s2}: {e}"))
                    })?;
                }
            }
        }
        Ok(())
    }

    pub fn effective_ks(&self) -> &[u32] {
        if self.k_values.is_empty() { std::slice::from_ref(&self.base.blocks) } else { &self.k_values }
    }

    pub fn effective_ms(&self) -> &[u32] {
        if self.m_values.is_empty() { std::slice::from_ref(&self.base.lazy_clients) } else { &self.m_values }
    }

    pub fn effective_sigma2s(&self) -> &[f64] {
        if self.sigma2_values.is_empty() { std::slice::from_ref(&self.base.sigma2) } else { &self.sigma2_values }
    }

    /// The concrete config for one grid cell.
    pub fn config_for(&self, k: u32, m: u32, sigma2: f64, rep: u32) -> SimConfig {
        SimConfig {
            blocks: k,
            lazy_clients: m,
            sigma2,
            seed: self.base.seed.wrapping_add(u64::from(rep)),
            ..self.base.clone()
        }
    }

    /// The full grid in merge order: K outermost, then M, then σ², then
    /// repetition.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        let mut index = 0;
        for &k in self.effective_ks() {
            for &m in self.effective_ms() {
                for &s2 in self.effective_sigma2s() {
                    for rep in 0..self.repetitions {
                        out.push(GridPoint { index, k, m, sigma2: s2, rep });
                        index += 1;
                    }
                }
            }
        }
        out
    }

    /// The (M, σ²) series the sweep aggregates into curves over K.
    pub fn series(&self) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        for &m in self.effective_ms() {
            for &s2 in self.effective_sigma2s() {
                out.push((m, s2));
            }
        }
        out
    }
}

/// Canonical artifact name for one (M, σ²) series, e.g.
/// `mean-m4-sigma2-0.01.csv`. Float formatting is the shortest string that
/// round-trips, so the same series always maps to the same file.
pub fn series_stem(prefix: &str, m: u32, sigma2: f64) -> String {
    format!("{prefix}-m{m}-sigma2-{sigma2}")
}
