//! End-to-end tests of the `bladefl` binary: real subprocesses, tiny
//! synthetic datasets, temp directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;

use bladefl_cli::spec::series_stem;
use bladefl_cli::store::mean_from_csv;
use bladefl_core::data::idx::{write_images, write_labels, IMAGE_DIM};
use bladefl_core::sim::{metrics_from_csv, MiningMode, SimConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bladefl"))
}

/// Deterministic miniature dataset in MNIST's on-disk layout.
fn write_fixture(dir: &Path, train_n: usize, test_n: usize) {
    fs::create_dir_all(dir).unwrap();
    for (n, img, lbl, salt) in [
        (train_n, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 0usize),
        (test_n, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 5),
    ] {
        let images = Array2::from_shape_fn((n, IMAGE_DIM), |(i, j)| {
            ((i * 31 + j * 7 + salt * 13) % 251) as u8
        });
        let labels: Vec<u8> = (0..n).map(|i| ((i + salt) % 10) as u8).collect();
        write_images(dir.join(img), &images).unwrap();
        write_labels(dir.join(lbl), &labels).unwrap();
    }
}

fn tiny_config() -> SimConfig {
    SimConfig {
        n_clients: 4,
        lazy_clients: 0,
        blocks: 3,
        tau: None,
        alpha: 0.5,
        beta: 1.0,
        t_sum: 12.0,
        sigma2: 0.0,
        eta: 0.05,
        hidden: 8,
        batch_size: 8,
        shard_size: 24,
        seed: 7,
        mining: MiningMode::Analytic,
        data_dir: None,
    }
}

struct Env {
    tmp: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(&tmp.path().join("data"), 120, 40);
        Self { tmp }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn write_config(&self, name: &str, cfg: &SimConfig) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, cfg.to_json_pretty()).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        bin()
            .args(args)
            .env("BLADEFL_DATA", self.path("data"))
            .current_dir(self.tmp.path())
            .output()
            .expect("binary runs")
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "expected success for {args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).into_owned()
    }

    fn run_err(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            !out.status.success(),
            "expected failure for {args:?}\nstdout: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    }
}

fn only_run_dir(out_root: &Path) -> PathBuf {
    let runs: Vec<_> = fs::read_dir(out_root.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    runs[0].clone()
}

#[test]
fn run_emits_artifacts_and_reruns_reproduce_them() {
    let env = Env::new();
    let cfg_path = env.write_config("config.json", &tiny_config());

    let stdout = env.run_ok(&["run", "--config", cfg_path.to_str().unwrap(), "--out", "out"]);
    assert!(stdout.contains("final train_loss"), "{stdout}");

    let run_dir = only_run_dir(&env.path("out"));
    for name in [
        "config.json",
        "metrics.csv",
        "trace.jsonl",
        "final_model.bin",
        "ledger.bin",
        "ledger.json",
        "run_info.json",
    ] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics_from_csv(&metrics).unwrap().len(), 3, "one row per block");

    // identical rerun: byte-identical deterministic artifacts
    let before: Vec<Vec<u8>> = ["metrics.csv", "ledger.bin", "final_model.bin", "trace.jsonl"]
        .iter()
        .map(|n| fs::read(run_dir.join(n)).unwrap())
        .collect();
    env.run_ok(&["run", "--config", cfg_path.to_str().unwrap(), "--out", "out"]);
    for (name, want) in ["metrics.csv", "ledger.bin", "final_model.bin", "trace.jsonl"]
        .iter()
        .zip(&before)
    {
        assert_eq!(&fs::read(run_dir.join(name)).unwrap(), want, "{name} changed");
    }

    // a different seed is a different record with different bytes
    env.run_ok(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        "out",
        "--seed",
        "8",
    ]);
    let runs: Vec<_> = fs::read_dir(env.path("out/runs")).unwrap().collect();
    assert_eq!(runs.len(), 2);
}

#[test]
fn run_rejects_bad_configs_with_diagnostics() {
    let env = Env::new();

    // budget cannot fit even one local pass per round
    let infeasible = SimConfig { blocks: 12, ..tiny_config() };
    let p = env.write_config("bad.json", &infeasible);
    let msg = env.run_err(&["run", "--config", p.to_str().unwrap()]);
    assert!(msg.contains("infeasible budget"), "{msg}");
    assert!(msg.contains("exceeds t_sum"), "{msg}");

    // unknown key
    let text = tiny_config().to_json_pretty().replace("\"seed\"", "\"sede\"");
    fs::write(env.path("typo.json"), text).unwrap();
    let msg = env.run_err(&["run", "--config", "typo.json"]);
    assert!(msg.contains("unknown field"), "{msg}");

    // missing file
    let msg = env.run_err(&["run", "--config", "nope.json"]);
    assert!(msg.contains("nope.json"), "{msg}");
}

fn sweep_spec_json(out_dir: &str) -> String {
    let mut cfg = serde_json::to_value(tiny_config()).unwrap();
    let obj = cfg.as_object_mut().unwrap();
    obj.insert("k_values".into(), serde_json::json!([2, 3]));
    obj.insert("m_values".into(), serde_json::json!([0, 1]));
    obj.insert("sigma2_values".into(), serde_json::json!([0.0, 0.25]));
    obj.insert("repetitions".into(), serde_json::json!(2));
    obj.insert("out_dir".into(), serde_json::json!(out_dir));
    serde_json::to_string_pretty(&cfg).unwrap()
}

#[test]
fn sweep_aggregates_series_and_is_parallel_invariant() {
    let env = Env::new();
    fs::write(env.path("sweep.json"), sweep_spec_json("sweep_out")).unwrap();

    let stdout = env.run_ok(&["sweep", "--spec", "sweep.json", "--parallel", "2"]);
    assert!(stdout.contains("16 points"), "{stdout}");
    assert!(stdout.contains("empirical K*"), "{stdout}");

    let out = env.path("sweep_out");
    let runs: Vec<_> = fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 16, "2 K x 2 M x 2 sigma2 x 2 reps");

    let mut aggregate_bytes = Vec::new();
    for m in [0u32, 1] {
        for s2 in [0.0f64, 0.25] {
            let p = out.join(format!("{}.csv", series_stem("mean", m, s2)));
            let text = fs::read_to_string(&p).unwrap_or_else(|_| panic!("{p:?}"));
            let rows = mean_from_csv(&text).unwrap();
            assert_eq!(rows.len(), 2, "one aggregate row per K");
            assert!(rows.iter().all(|r| r.reps == 2));
            assert_eq!(rows[0].k, 2);
            assert_eq!(rows[1].k, 3);
            aggregate_bytes.push(text);
        }
    }
    for plot in ["loss_vs_k.svg", "accuracy_vs_k.svg"] {
        let svg = fs::read_to_string(out.join(plot)).unwrap();
        assert!(svg.starts_with("<svg"), "{plot}");
        assert!(svg.matches("<polyline").count() >= 4, "{plot} series");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "header + 4 series: {summary}");

    // rerunning sequentially must reproduce the aggregates byte-for-byte
    env.run_ok(&["sweep", "--spec", "sweep.json", "--parallel", "1"]);
    for (i, (m, s2)) in [(0u32, 0.0f64), (0, 0.25), (1, 0.0), (1, 0.25)].iter().enumerate() {
        let p = out.join(format!("{}.csv", series_stem("mean", *m, *s2)));
        assert_eq!(fs::read_to_string(&p).unwrap(), aggregate_bytes[i]);
    }
}

#[test]
fn degenerate_sweep_equals_a_single_run() {
    let env = Env::new();
    let cfg = tiny_config();

    let mut spec = serde_json::to_value(&cfg).unwrap();
    spec.as_object_mut()
        .unwrap()
        .insert("out_dir".into(), serde_json::json!("sweep_out"));
    fs::write(env.path("single.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    env.run_ok(&["sweep", "--spec", "single.json"]);

    let cfg_path = env.write_config("config.json", &cfg);
    env.run_ok(&["run", "--config", cfg_path.to_str().unwrap(), "--out", "run_out"]);

    let sweep_dir = only_run_dir(&env.path("sweep_out"));
    let run_dir = only_run_dir(&env.path("run_out"));
    assert_eq!(sweep_dir.file_name(), run_dir.file_name(), "same record key");
    for name in ["metrics.csv", "ledger.bin", "final_model.bin", "config.json"] {
        assert_eq!(
            fs::read(sweep_dir.join(name)).unwrap(),
            fs::read(run_dir.join(name)).unwrap(),
            "{name} differs between sweep and run"
        );
    }
}

#[test]
fn sweep_rejects_an_infeasible_grid_point_before_running() {
    let env = Env::new();
    let mut spec = serde_json::to_value(tiny_config()).unwrap();
    spec.as_object_mut()
        .unwrap()
        .insert("k_values".into(), serde_json::json!([2, 12]));
    fs::write(env.path("bad.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let msg = env.run_err(&["sweep", "--spec", "bad.json"]);
    assert!(msg.contains("K=12"), "{msg}");
    assert!(msg.contains("infeasible"), "{msg}");
    assert!(!env.path("out/runs").exists(), "nothing may run");
}

fn repo_calibration() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/calibration-mnist.json")
}

#[test]
fn bound_emits_curves_and_overlays_simulation_data() {
    let env = Env::new();
    let cal = repo_calibration();

    let stdout = env.run_ok(&["bound", "--calibration", cal.to_str().unwrap(), "--out", "bnd"]);
    assert!(stdout.contains("analytic K* = 6"), "{stdout}");
    assert!(stdout.contains("unimodal: yes"), "{stdout}");
    let csv = fs::read_to_string(env.path("bnd").join("bound-m0-sigma2-0.01.csv")).unwrap();
    let rows = bladefl_core::bound::sweep_from_csv(&csv).unwrap();
    assert_eq!(rows.len(), 9, "every feasible K");
    assert!(rows.iter().filter(|r| r.valid).count() >= 4);
    assert!(env.path("bnd/bound_vs_k.svg").exists());

    // drop a simulated mean curve where the bound command will look,
    // minimum at K=5 (one off the analytic optimum)
    let mean = "k,train_loss,test_loss,test_accuracy,reps\n\
                4,1.43,1.5,0.79,3\n5,1.39,1.46,0.8,3\n6,1.42,1.48,0.79,3\n7,1.47,1.52,0.8,3\n";
    fs::write(env.path("bnd").join("mean-m0-sigma2-0.01.csv"), mean).unwrap();
    let stdout = env.run_ok(&["bound", "--calibration", cal.to_str().unwrap(), "--out", "bnd"]);
    assert!(stdout.contains("empirical K* = 5"), "{stdout}");
    assert!(stdout.contains("within +/-1: yes"), "{stdout}");
    let overlay = env.path("bnd").join("bound_overlay-m0-sigma2-0.01.svg");
    let svg = fs::read_to_string(overlay).unwrap();
    assert!(svg.contains("simulated final train loss"));

    // missing calibration file → diagnostic, nonzero
    let msg = env.run_err(&["bound", "--calibration", "missing.json"]);
    assert!(msg.contains("missing.json"), "{msg}");
}

#[test]
fn bound_takes_axes_from_a_spec_file() {
    let env = Env::new();
    let cal = repo_calibration();
    // reuse the calibration's budget; only the axes matter here
    let spec = r#"{
        "n_clients": 20, "blocks": 7, "alpha": 1.0, "beta": 10.0,
        "t_sum": 100.0, "eta": 0.01, "hidden": 8, "batch_size": 32,
        "shard_size": 24, "seed": 1,
        "m_values": [0, 4], "sigma2_values": [0.01, 0.3], "out_dir": "unused"
    }"#;
    fs::write(env.path("axes.json"), spec).unwrap();
    let stdout = env.run_ok(&[
        "bound",
        "--calibration",
        cal.to_str().unwrap(),
        "--spec",
        "axes.json",
        "--out",
        "bnd",
    ]);
    assert_eq!(stdout.matches("analytic K* = 6").count(), 4, "{stdout}");
    for (m, s2) in [(0u32, 0.01f64), (0, 0.3), (4, 0.01), (4, 0.3)] {
        assert!(env.path("bnd").join(format!("{}.csv", series_stem("bound", m, s2))).exists());
    }
}

#[test]
fn fetch_data_verifies_structure_and_names_failures() {
    let env = Env::new();

    let stdout = env.run_ok(&["fetch-data", "mnist", "--out", "data"]);
    assert!(stdout.contains("all checks passed"), "{stdout}");
    assert!(stdout.contains("never downloads"), "{stdout}");
    assert!(stdout.contains("differs from the canonical release"), "{stdout}");
    for f in [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ] {
        assert!(stdout.contains(f), "missing {f} in report");
    }

    // truncated image file
    let img = env.path("data/train-images-idx3-ubyte");
    let full = fs::read(&img).unwrap();
    fs::write(&img, &full[..full.len() - 50]).unwrap();
    let msg = env.run_err(&["fetch-data", "mnist", "--out", "data"]);
    assert!(msg.contains("truncated"), "{msg}");

    // wrong magic
    let mut bad = full.clone();
    bad[0] = 0xFF;
    fs::write(&img, &bad).unwrap();
    let msg = env.run_err(&["fetch-data", "--out", "data"]);
    assert!(msg.contains("magic"), "{msg}");

    // missing file
    fs::remove_file(&img).unwrap();
    let msg = env.run_err(&["fetch-data", "--out", "data"]);
    assert!(msg.contains("missing"), "{msg}");

    // unsupported dataset name
    let msg = env.run_err(&["fetch-data", "cifar10"]);
    assert!(msg.contains("only \"mnist\""), "{msg}");
}

#[test]
fn verify_ledger_accepts_good_chains_and_rejects_tampering() {
    let env = Env::new();
    let cfg_path = env.write_config("config.json", &tiny_config());
    env.run_ok(&["run", "--config", cfg_path.to_str().unwrap(), "--out", "out"]);
    let run_dir = only_run_dir(&env.path("out"));
    let ledger = run_dir.join("ledger.bin");

    // difficulty comes from the sibling config.json automatically
    let stdout = env.run_ok(&["verify-ledger", ledger.to_str().unwrap()]);
    assert!(stdout.contains("ledger ok: 3 blocks"), "{stdout}");

    // explicit config works too
    let stdout = env.run_ok(&[
        "verify-ledger",
        ledger.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert!(stdout.contains("ledger ok"), "{stdout}");

    // flip one byte inside a block body
    let mut bytes = fs::read(&ledger).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    fs::write(&ledger, &bytes).unwrap();
    let msg = env.run_err(&["verify-ledger", ledger.to_str().unwrap()]);
    assert!(
        msg.contains("verification") || msg.contains("ledger"),
        "{msg}"
    );
}
