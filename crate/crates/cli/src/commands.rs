//! The five subcommands. Each returns `anyhow::Result` so the binary exits
//! nonzero with a readable diagnostic chain on any failure.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;

use bladefl_core::bound::{optimize_k, sweep, sweep_to_csv, Calibration, SweepRow};
use bladefl_core::chain::{verify_chain, Ledger};
use bladefl_core::sim::{run_simulation, MetricsRow, MiningMode, SimConfig};
use bladefl_core::{Dataset, Error};

use crate::chart::{line_chart, Series};
use crate::fetch::{verify_mnist, MNIST_FILES};
use crate::spec::{series_stem, ExperimentSpec, GridPoint};
use crate::store::{
    empirical_k_star, mean_from_csv, mean_rows, mean_to_csv, run_id, MeanRow, MetricsStore,
};

/// Environment variable that overrides every other data-directory source.
pub const DATA_DIR_ENV: &str = "BLADEFL_DATA";

fn resolve_data_dir(cfg: &SimConfig) -> PathBuf {
    env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load_dataset(dir: &Path) -> anyhow::Result<(Dataset, Dataset)> {
    let hint = format!(
        "loading dataset from {} (run `bladefl fetch-data` to see what files are expected, \
         or point {DATA_DIR_ENV} at them)",
        dir.display()
    );
    let train = Dataset::load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )
    .with_context(|| hint.clone())?;
    let test = Dataset::load_idx(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
    .with_context(|| hint)?;
    Ok((train, test))
}

fn read_config(path: &Path) -> anyhow::Result<SimConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    SimConfig::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = read_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (train, test) = load_dataset(&resolve_data_dir(&cfg))?;
    let store = MetricsStore::new(out);

    let started = Instant::now();
    let output = run_simulation(&cfg, &train, &test)
        .with_context(|| format!("running config {}", config.display()))?;
    let paths = store.record(&cfg, &output, started.elapsed())?;

    let last = output.metrics.last().expect("a run has at least one round");
    println!(
        "run {}: K={} tau={} | final train_loss {:.4} test_loss {:.4} accuracy {:.4}",
        run_id(&cfg),
        cfg.blocks,
        output.tau,
        last.train_loss,
        last.test_loss,
        last.test_accuracy
    );
    println!("artifacts: {}", paths.dir.display());
    Ok(())
}

pub fn cmd_sweep(spec_path: &Path, out: Option<&Path>, parallel: usize) -> anyhow::Result<()> {
    let mut spec = ExperimentSpec::load(spec_path)
        .with_context(|| format!("loading sweep spec {}", spec_path.display()))?;
    if let Some(out) = out {
        spec.out_dir = out.to_path_buf();
    }
    let (train, test) = load_dataset(&resolve_data_dir(&spec.base))?;
    let store = MetricsStore::new(&spec.out_dir);
    fs::create_dir_all(&spec.out_dir)?;

    let points = spec.points();
    let total = points.len();
    println!(
        "sweep: {} points ({} K x {} M x {} sigma2 x {} reps) -> {}",
        total,
        spec.effective_ks().len(),
        spec.effective_ms().len(),
        spec.effective_sigma2s().len(),
        spec.repetitions,
        spec.out_dir.display()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .context("building the worker pool")?;
    // Each point runs from its own seeded streams and writes only its own
    // record, so workers can't affect each other's bytes; only the order
    // of the progress lines depends on scheduling.
    let run_point = |pt: &GridPoint| -> Result<(GridPoint, MetricsRow), Error> {
        let cfg = spec.config_for(pt.k, pt.m, pt.sigma2, pt.rep);
        let started = Instant::now();
        let output = run_simulation(&cfg, &train, &test)?;
        store.record(&cfg, &output, started.elapsed())?;
        let last = output.metrics.last().expect("a run has at least one round").clone();
        println!(
            "  [{}/{}] K={} M={} sigma2={} rep={}: train_loss {:.4} accuracy {:.4} ({:.1}s)",
            pt.index + 1,
            total,
            pt.k,
            pt.m,
            pt.sigma2,
            pt.rep,
            last.train_loss,
            last.test_accuracy,
            started.elapsed().as_secs_f64()
        );
        Ok((*pt, last))
    };
    let mut results: Vec<(GridPoint, MetricsRow)> =
        pool.install(|| points.par_iter().map(run_point).collect::<Result<_, _>>())?;
    results.sort_by_key(|(pt, _)| pt.index);

    // Aggregate each (M, sigma2) series into a mean curve over K.
    let mut summary = String::from("m,sigma2,k_star,train_loss_at_k_star,best_accuracy_k,best_accuracy\n");
    let mut loss_series = Vec::new();
    let mut acc_series = Vec::new();
    for (m, s2) in spec.series() {
        let finals: Vec<(u32, Vec<MetricsRow>)> = spec
            .effective_ks()
            .iter()
            .map(|&k| {
                let rows = results
                    .iter()
                    .filter(|(pt, _)| pt.k == k && pt.m == m && pt.sigma2 == s2)
                    .map(|(_, row)| row.clone())
                    .collect();
                (k, rows)
            })
            .collect();
        let rows = mean_rows(&finals);
        let csv_path = spec.out_dir.join(format!("{}.csv", series_stem("mean", m, s2)));
        fs::write(&csv_path, mean_to_csv(&rows))?;

        let k_star = empirical_k_star(&rows).expect("every series has at least one K");
        let at_star = rows.iter().find(|r| r.k == k_star).expect("k_star is a row");
        let best_acc = rows
            .iter()
            .max_by(|a, b| {
                a.test_accuracy
                    .partial_cmp(&b.test_accuracy)
                    .expect("finite accuracies")
                    // ties toward smaller K
                    .then(b.k.cmp(&a.k))
            })
            .expect("nonempty");
        summary.push_str(&format!(
            "{m},{s2},{k_star},{},{},{}\n",
            at_star.train_loss, best_acc.k, best_acc.test_accuracy
        ));
        println!(
            "  series M={m} sigma2={s2}: empirical K* = {k_star} (mean train_loss {:.4}), best accuracy {:.4} at K={}",
            at_star.train_loss, best_acc.test_accuracy, best_acc.k
        );

        let label = format!("M={m}, σ²={s2}");
        loss_series.push(Series {
            label: label.clone(),
            points: rows.iter().map(|r| (f64::from(r.k), r.train_loss)).collect(),
            marker: Some(f64::from(k_star)),
        });
        acc_series.push(Series {
            label,
            points: rows.iter().map(|r| (f64::from(r.k), r.test_accuracy)).collect(),
            marker: Some(f64::from(best_acc.k)),
        });
    }
    fs::write(spec.out_dir.join("summary.csv"), summary)?;
    fs::write(
        spec.out_dir.join("loss_vs_k.svg"),
        line_chart("final training loss vs block count", "blocks K", "final train loss", &loss_series),
    )?;
    fs::write(
        spec.out_dir.join("accuracy_vs_k.svg"),
        line_chart("test accuracy vs block count", "blocks K", "test accuracy", &acc_series),
    )?;
    println!("aggregates and plots: {}", spec.out_dir.display());
    Ok(())
}

/// Strictly falling to one minimum, then strictly rising, with the finite
/// stretch contiguous — the shape the analysis promises for the bound.
fn bound_curve_unimodal(rows: &[SweepRow]) -> bool {
    let finite: Vec<f64> = rows.iter().filter_map(|r| r.bound).collect();
    if finite.is_empty() {
        return false;
    }
    let first = rows.iter().position(|r| r.valid).expect("nonempty");
    if rows[first..].iter().take(finite.len()).any(|r| !r.valid) {
        return false;
    }
    let mut i = 1;
    while i < finite.len() && finite[i] < finite[i - 1] {
        i += 1;
    }
    while i < finite.len() && finite[i] > finite[i - 1] {
        i += 1;
    }
    i == finite.len()
}

pub fn cmd_bound(calibration: &Path, spec_path: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let cal = Calibration::load(calibration)
        .with_context(|| format!("loading calibration {}", calibration.display()))?;
    let (ms, s2s): (Vec<u32>, Vec<f64>) = match spec_path {
        Some(p) => {
            let spec = ExperimentSpec::load(p)
                .with_context(|| format!("loading sweep spec {}", p.display()))?;
            (spec.effective_ms().to_vec(), spec.effective_sigma2s().to_vec())
        }
        None => (vec![cal.params.lazy_clients], vec![cal.params.sigma2]),
    };
    fs::create_dir_all(out)?;
    println!(
        "bound curves for {} ({} series) -> {}",
        cal.dataset,
        ms.len() * s2s.len(),
        out.display()
    );

    let mut bound_series = Vec::new();
    for &m in &ms {
        for &s2 in &s2s {
            let p = cal.params.with_lazy_clients(m).with_sigma2(s2);
            let rows = sweep(&p).context("evaluating the bound curve")?;
            let stem = series_stem("bound", m, s2);
            fs::write(out.join(format!("{stem}.csv")), sweep_to_csv(&rows))?;

            let finite: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| r.bound.map(|b| (f64::from(r.k), b)))
                .collect();
            match optimize_k(&p) {
                Ok(opt) => {
                    println!(
                        "  series M={m} sigma2={s2}: analytic K* = {} (bound {:.4}), unimodal: {}",
                        opt.k_star,
                        opt.bound,
                        if bound_curve_unimodal(&rows) { "yes" } else { "NO" }
                    );
                    bound_series.push(Series {
                        label: format!("M={m}, σ²={s2}"),
                        points: finite.clone(),
                        marker: Some(f64::from(opt.k_star)),
                    });
                    overlay_simulation(out, m, s2, &finite, opt.k_star)?;
                }
                Err(Error::NoValidK(msg)) => {
                    println!("  series M={m} sigma2={s2}: {msg}");
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    if !bound_series.is_empty() {
        fs::write(
            out.join("bound_vs_k.svg"),
            line_chart("loss upper bound vs block count", "blocks K", "loss upper bound", &bound_series),
        )?;
    }
    Ok(())
}

/// If a sweep already left a mean curve for this series in the output
/// directory, chart it against the analytic curve and report whether the
/// two optima agree to within one block.
fn overlay_simulation(
    out: &Path,
    m: u32,
    s2: f64,
    bound_points: &[(f64, f64)],
    k_star: u32,
) -> anyhow::Result<()> {
    let sim_csv = out.join(format!("{}.csv", series_stem("mean", m, s2)));
    if !sim_csv.exists() {
        return Ok(());
    }
    let mean: Vec<MeanRow> = mean_from_csv(&fs::read_to_string(&sim_csv)?)
        .with_context(|| format!("parsing {}", sim_csv.display()))?;
    let empirical = empirical_k_star(&mean);
    if let Some(ek) = empirical {
        let delta = (i64::from(k_star) - i64::from(ek)).abs();
        println!(
            "    simulation overlay: empirical K* = {ek}, analytic K* = {k_star}, within +/-1: {}",
            if delta <= 1 { "yes" } else { "NO" }
        );
    }
    let overlay = vec![
        Series {
            label: "analytic upper bound".into(),
            points: bound_points.to_vec(),
            marker: Some(f64::from(k_star)),
        },
        Series {
            label: "simulated final train loss".into(),
            points: mean.iter().map(|r| (f64::from(r.k), r.train_loss)).collect(),
            marker: empirical.map(f64::from),
        },
    ];
    fs::write(
        out.join(format!("{}.svg", series_stem("bound_overlay", m, s2))),
        line_chart(
            &format!("bound vs simulation, M={m}, σ²={s2}"),
            "blocks K",
            "loss / bound value",
            &overlay,
        ),
    )?;
    Ok(())
}

pub fn cmd_fetch_data(name: &str, dir: Option<&Path>) -> anyhow::Result<()> {
    if name != "mnist" {
        bail!("unknown dataset {name:?}; only \"mnist\" is supported");
    }
    let dir = dir
        .map(Path::to_path_buf)
        .or_else(|| env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"));

    println!("dataset mnist in {}", dir.display());
    println!("expected files (canonical decompressed release):");
    for f in &MNIST_FILES {
        println!("  {:<28} {:>10} bytes  sha256 {}", f.name, f.bytes, f.sha256);
    }
    println!("this command never downloads; place the files in the directory above.");
    println!();

    let (results, cross) = verify_mnist(&dir);
    let mut failures = Vec::new();
    for (name, result) in &results {
        match result {
            Ok(st) => {
                let what = if name.contains("images") { "images" } else { "labels" };
                let note = if st.canonical {
                    "matches the canonical release"
                } else {
                    "differs from the canonical release (still structurally valid)"
                };
                println!(
                    "  {name:<28} ok: {} {what}, {} bytes, sha256 {}… — {note}",
                    st.count,
                    st.bytes,
                    &st.sha256[..12]
                );
            }
            Err(e) => {
                println!("  {name:<28} FAILED: {e}");
                failures.push(format!("{name}: {e}"));
            }
        }
    }
    for c in &cross {
        println!("  cross-check FAILED: {c}");
        failures.push(c.clone());
    }
    if !failures.is_empty() {
        bail!("dataset verification failed:\n  {}", failures.join("\n  "));
    }
    println!("all checks passed.");
    Ok(())
}

pub fn cmd_verify_ledger(ledger_path: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let ledger = Ledger::load(ledger_path)
        .with_context(|| format!("reading ledger {}", ledger_path.display()))?;

    // The mining difficulty to check against comes from the run's config:
    // an explicit --config, else the config.json recorded beside the
    // ledger, else the analytic-mode default of zero.
    let sibling = ledger_path.parent().map(|d| d.join("config.json"));
    let config_path = config
        .map(Path::to_path_buf)
        .or(sibling.filter(|p| p.exists()));
    let difficulty = match &config_path {
        Some(p) => match read_config(p)?.mining {
            MiningMode::Puzzle { difficulty } => difficulty,
            MiningMode::Analytic => 0,
        },
        None => {
            println!("no run config found; assuming difficulty 0");
            0
        }
    };

    verify_chain(&ledger, difficulty)
        .with_context(|| format!("ledger {} failed verification", ledger_path.display()))?;
    println!(
        "ledger ok: {} blocks verified at difficulty {difficulty}",
        ledger.len()
    );
    Ok(())
}
