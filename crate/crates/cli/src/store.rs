//! On-disk run records and the aggregate curve format.
//!
//! A store is a directory tree under `<root>/runs/`, one subdirectory per
//! run, named `<first 12 hex digits of the config hash>-s<seed>`. Records
//! only accumulate — nothing here ever deletes — and re-running an
//! identical config overwrites its own record with identical bytes, so the
//! tree doubles as a cache. The single exception is `run_info.json`, which
//! holds wall-clock facts (timestamps, durations) and is allowed to differ
//! between reruns; every other artifact is a pure function of the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};

use bladefl_core::error::{Error, Result};
use bladefl_core::sim::{metrics_to_csv, traces_to_jsonl, MetricsRow, SimConfig, SimOutput};

/// Directory name for one run: config hash prefix plus the seed. The seed
/// is already hashed into the prefix; it appears in clear so a human can
/// find a repetition without opening config files.
pub fn run_id(cfg: &SimConfig) -> String {
    format!("{}-s{}", &cfg.spec_hash()[..12], cfg.seed)
}

/// Paths of every artifact one run emits.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub trace: PathBuf,
    pub final_model: PathBuf,
    pub ledger: PathBuf,
    pub ledger_json: PathBuf,
    pub run_info: PathBuf,
}

impl RunPaths {
    fn under(dir: PathBuf) -> Self {
        Self {
            config: dir.join("config.json"),
            metrics: dir.join("metrics.csv"),
            trace: dir.join("trace.jsonl"),
            final_model: dir.join("final_model.bin"),
            ledger: dir.join("ledger.bin"),
            ledger_json: dir.join("ledger.json"),
            run_info: dir.join("run_info.json"),
            dir,
        }
    }
}

/// Wall-clock facts about one execution. Everything time-like is
/// quarantined in this file so the rest of the record stays reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub spec_hash: String,
    pub seed: u64,
    pub tau: u32,
    pub finished_unix_ms: u128,
    pub wall_seconds: f64,
}

pub struct MetricsStore {
    root: PathBuf,
}

impl MetricsStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn paths_for(&self, cfg: &SimConfig) -> RunPaths {
        RunPaths::under(self.root.join("runs").join(run_id(cfg)))
    }

    /// Persist every artifact of a finished run.
    pub fn record(&self, cfg: &SimConfig, out: &SimOutput, wall: Duration) -> Result<RunPaths> {
        let paths = self.paths_for(cfg);
        fs::create_dir_all(&paths.dir)?;
        fs::write(&paths.config, cfg.to_json_pretty())?;
        fs::write(&paths.metrics, metrics_to_csv(&out.metrics))?;
        fs::write(&paths.trace, traces_to_jsonl(&out.traces)?)?;
        fs::write(&paths.final_model, out.final_model.canonical_bytes())?;
        out.ledger.save(&paths.ledger)?;
        fs::write(&paths.ledger_json, out.ledger.to_json_string()?)?;
        let info = RunInfo {
            spec_hash: out.spec_hash.clone(),
            seed: cfg.seed,
            tau: out.tau,
            finished_unix_ms: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            wall_seconds: wall.as_secs_f64(),
        };
        let mut info_json = serde_json::to_string_pretty(&info)?;
        info_json.push('\n');
        fs::write(&paths.run_info, info_json)?;
        Ok(paths)
    }

    /// Run ids currently recorded, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let runs = self.root.join("runs");
        if !runs.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(runs)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// One row of an aggregate curve: the final-round metrics of a block count,
/// averaged over repetitions of one (M, σ²) series.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub k: u32,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub reps: u32,
}

pub const MEAN_HEADER: &str = "k,train_loss,test_loss,test_accuracy,reps";

/// Average the final rounds of one series. `finals` holds, per block count
/// in order, the final metrics row of every repetition.
pub fn mean_rows(finals: &[(u32, Vec<MetricsRow>)]) -> Vec<MeanRow> {
    finals
        .iter()
        .map(|(k, rows)| {
            let n = rows.len() as f64;
            MeanRow {
                k: *k,
                train_loss: rows.iter().map(|r| r.train_loss).sum::<f64>() / n,
                test_loss: rows.iter().map(|r| r.test_loss).sum::<f64>() / n,
                test_accuracy: rows.iter().map(|r| r.test_accuracy).sum::<f64>() / n,
                reps: rows.len() as u32,
            }
        })
        .collect()
}

pub fn mean_to_csv(rows: &[MeanRow]) -> String {
    let mut out = String::from(MEAN_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k, r.train_loss, r.test_loss, r.test_accuracy, r.reps
        ));
    }
    out
}

pub fn mean_from_csv(text: &str) -> Result<Vec<MeanRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MEAN_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "aggregate CSV header mismatch: expected {MEAN_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Config(format!(
                "aggregate CSV line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Config(format!("aggregate CSV line {}: bad {what}", i + 2));
        rows.push(MeanRow {
            k: fields[0].parse().map_err(|_| bad("k"))?,
            train_loss: fields[1].parse().map_err(|_| bad("train_loss"))?,
            test_loss: fields[2].parse().map_err(|_| bad("test_loss"))?,
            test_accuracy: fields[3].parse().map_err(|_| bad("test_accuracy"))?,
            reps: fields[4].parse().map_err(|_| bad("reps"))?,
        });
    }
    Ok(rows)
}

/// Smallest K minimizing mean final train loss — the empirical optimum the
/// curves are compared against.
pub fn empirical_k_star(rows: &[MeanRow]) -> Option<u32> {
    rows.iter()
        .fold(None::<(u32, f64)>, |best, r| match best {
            Some((bk, b)) if b < r.train_loss || (b == r.train_loss && bk < r.k) => best,
            _ => Some((r.k, r.train_loss)),
        })
        .map(|(k, _)| k)
}
