//! Per-round artifacts: the compact metrics table (CSV) and the full
//! per-round trace (JSON lines).
//!
//! Floats are rendered with the shortest representation that parses back to
//! the identical bits, so a written table reloads without drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per completed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Round number, 1-based; the block recording it has index `k - 1`.
    pub k: u32,
    /// Cumulative simulated time charged through this round.
    pub sim_time: f64,
    /// Local passes each honest client ran this round.
    pub tau: u32,
    /// Loss of the freshly aggregated model over the union of training
    /// shards (shard-size weighted).
    pub train_loss: f64,
    /// Loss of the aggregated model on the held-out test set.
    pub test_loss: f64,
    /// Argmax accuracy of the aggregated model on the test set.
    pub test_accuracy: f64,
    /// Client that mined this round's block.
    pub winner: u32,
    /// First 8 hex digits of the block hash, enough to eyeball lineage.
    pub block_hash_prefix: String,
}

pub const METRICS_HEADER: &str =
    "k,sim_time,tau,train_loss,test_loss,test_accuracy,winner,block_hash_prefix";

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            r.sim_time,
            r.tau,
            r.train_loss,
            r.test_loss,
            r.test_accuracy,
            r.winner,
            r.block_hash_prefix
        ));
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "metrics CSV header mismatch: expected {METRICS_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "metrics CSV line {}: expected 8 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Config(format!("metrics CSV line {}: bad {what}", i + 2));
        rows.push(MetricsRow {
            k: fields[0].parse().map_err(|_| bad("k"))?,
            sim_time: fields[1].parse().map_err(|_| bad("sim_time"))?,
            tau: fields[2].parse().map_err(|_| bad("tau"))?,
            train_loss: fields[3].parse().map_err(|_| bad("train_loss"))?,
            test_loss: fields[4].parse().map_err(|_| bad("test_loss"))?,
            test_accuracy: fields[5].parse().map_err(|_| bad("test_accuracy"))?,
            winner: fields[6].parse().map_err(|_| bad("winner"))?,
            block_hash_prefix: fields[7].to_string(),
        });
    }
    Ok(rows)
}

/// One model upload as the pool saw it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub client: u32,
    /// SHA-256 of the canonical model bytes, hex.
    pub digest: String,
    pub lazy: bool,
    /// Whose model a lazy client copied; `None` for honest uploads.
    pub victim: Option<u32>,
    /// Simulated training time this client actually spent.
    pub train_cost: f64,
}

/// Everything that happened in one round, for audit and debugging; the
/// metrics row is a projection of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Round number, 1-based.
    pub round: u32,
    /// Index of the block the round committed.
    pub block_index: u64,
    pub uploads: Vec<UploadRecord>,
    pub winner: u32,
    /// Simulated time the training phase occupied (the slowest client).
    pub train_time: f64,
    /// Sampled duration of the mining race (analytic mode) or the charged
    /// expectation (puzzle mode).
    pub mine_time: f64,
    /// Hash attempts the winner spent; absent in analytic mode.
    pub mine_attempts: Option<u64>,
    /// Time actually added to the budget for this round.
    pub charged_time: f64,
    /// SHA-256 of the aggregated model everyone ends the round with.
    pub global_digest: String,
}

pub fn traces_to_jsonl(traces: &[RoundTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn traces_from_jsonl(text: &str) -> Result<Vec<RoundTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                k: 1,
                sim_time: 14.0,
                tau: 4,
                train_loss: 0.1 + 0.2, // deliberately not a round float
                test_loss: 1.5,
                test_accuracy: 0.8125,
                winner: 3,
                block_hash_prefix: "a1b2c3d4".into(),
            },
            MetricsRow {
                k: 2,
                sim_time: 28.0,
                tau: 4,
                train_loss: f64::MIN_POSITIVE,
                test_loss: 1.0e300,
                test_accuracy: 0.0,
                winner: 0,
                block_hash_prefix: "00000000".into(),
            },
        ]
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let rows = sample_rows();
        let csv = metrics_to_csv(&rows);
        assert!(csv.starts_with(METRICS_HEADER));
        let back = metrics_from_csv(&csv).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.sim_time.to_bits(), b.sim_time.to_bits());
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.test_loss.to_bits(), b.test_loss.to_bits());
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(a.block_hash_prefix, b.block_hash_prefix);
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(metrics_from_csv("wrong,header\n").is_err());
        let short = format!("{METRICS_HEADER}\n1,2,3\n");
        assert!(metrics_from_csv(&short).is_err());
        let bad_float = format!("{METRICS_HEADER}\n1,abc,4,0.1,0.2,0.3,0,deadbeef\n");
        assert!(metrics_from_csv(&bad_float).is_err());
    }

    #[test]
    fn traces_round_trip_as_json_lines() {
        let traces = vec![RoundTrace {
            round: 1,
            block_index: 0,
            uploads: vec![
                UploadRecord {
                    client: 0,
                    digest: "ab".repeat(32),
                    lazy: false,
                    victim: None,
                    train_cost: 4.0,
                },
                UploadRecord {
                    client: 1,
                    digest: "cd".repeat(32),
                    lazy: true,
                    victim: Some(0),
                    train_cost: 0.0,
                },
            ],
            winner: 1,
            train_time: 4.0,
            mine_time: 9.25,
            mine_attempts: None,
            charged_time: 14.0,
            global_digest: "ef".repeat(32),
        }];
        let jsonl = traces_to_jsonl(&traces).unwrap();
        assert_eq!(jsonl.lines().count(), 1);
        let back = traces_from_jsonl(&jsonl).unwrap();
        assert_eq!(back, traces);
        assert!(traces_from_jsonl("{not json}\n").is_err());
    }
}
