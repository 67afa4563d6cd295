//! The four subcommands. Each computes everything in memory before creating
//! the output directory, so a failed run leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use neural_nmf::data::{make_labels, synth_hier_with, write_labels_csv, write_matrix_csv, BlockSpec};
use neural_nmf::engine::{forward, LossSpec};
use neural_nmf::gradcheck::{self, GradReport, ProbeMode};
use neural_nmf::nmf::a_chain;
use neural_nmf::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{BPinv, Probes, RunConfig};
use crate::dataset::{self, HashedFile};
use crate::experiment::{layer_metrics, mean_metrics, run_trials, LayerMetrics, TrialResult};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    write_matrix_csv(path, m).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial:03}"))
}

/// Writes `X.csv`, `labels.csv` and `block_spec.json`.
pub fn generate(cfg: &RunConfig) -> Result<()> {
    let d = synth_hier_with(cfg.seed, cfg.noise);
    create_dir(&cfg.out)?;
    write_matrix(&cfg.out.join("X.csv"), &d.x)?;
    write_labels_csv(&cfg.out.join("labels.csv"), &d.labels).context("writing labels.csv")?;
    #[derive(Serialize)]
    struct Meta<'a> {
        seed: u64,
        noise: bool,
        rows: usize,
        cols: usize,
        classes: usize,
        block_spec: &'a BlockSpec,
    }
    write_json(
        &cfg.out.join("block_spec.json"),
        &Meta {
            seed: cfg.seed,
            noise: cfg.noise,
            rows: d.x.rows(),
            cols: d.x.cols(),
            classes: d.classes(),
            block_spec: &d.block_spec,
        },
    )?;
    println!("wrote {}x{} synthetic matrix to {}", d.x.rows(), d.x.cols(), cfg.out.display());
    Ok(())
}

/// Long-format `matrix,row,col,value` rows for every A-matrix and the
/// final approximation of X.
fn heatmap_csv(a: &[DenseMatrix], s_last: &DenseMatrix) -> Result<String> {
    let mut out = String::from("matrix,row,col,value\n");
    let mut emit = |name: &str, m: &DenseMatrix| {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let _ = writeln!(out, "{name},{i},{j},{:.16e}", m.get(i, j));
            }
        }
    };
    for (l, m) in a.iter().enumerate() {
        emit(&format!("A{l}"), m);
    }
    emit("approx", &a_chain(a)?.matmul(s_last)?);
    Ok(out)
}

fn history_csv(history: &[(String, usize, f64)]) -> String {
    let mut out = String::from("stage,iteration,value\n");
    for (stage, i, v) in history {
        let _ = writeln!(out, "{stage},{i},{v:.16e}");
    }
    out
}

fn write_trial(dir: &Path, t: &TrialResult) -> Result<()> {
    create_dir(dir)?;
    for (l, (a, s)) in t.a.iter().zip(&t.s).enumerate() {
        write_matrix(&dir.join(format!("A{l}.csv")), a)?;
        write_matrix(&dir.join(format!("S{l}.csv")), s)?;
    }
    if let Some(b) = &t.b {
        write_matrix(&dir.join("B.csv"), b)?;
    }
    fs::write(dir.join("loss_history.csv"), history_csv(&t.history))?;
    fs::write(dir.join("heatmap.csv"), heatmap_csv(&t.a, t.s.last().expect("nonempty stack"))?)?;
    write_json(&dir.join("metrics.json"), &t.summary)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanSummary {
    pub layers: Vec<LayerMetrics>,
    pub fit: Vec<LayerMetrics>,
    pub warm_start: Option<Vec<LayerMetrics>>,
}

pub fn summarize(results: &[TrialResult]) -> MeanSummary {
    let warm: Option<Vec<&[LayerMetrics]>> = results.iter().map(|r| r.summary.warm_start.as_deref()).collect();
    MeanSummary {
        layers: mean_metrics(results.iter().map(|r| r.summary.layers.as_slice())),
        fit: mean_metrics(results.iter().map(|r| r.summary.fit.as_slice())),
        warm_start: warm.map(mean_metrics),
    }
}

fn print_metrics(label: &str, metrics: &[LayerMetrics]) {
    for (l, m) in metrics.iter().enumerate() {
        let acc = m.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("{label} layer {l}: recon_error {:.6} accuracy {acc}", m.recon_error);
    }
}

pub fn train(cfg: &RunConfig) -> Result<Vec<TrialResult>> {
    let data = dataset::load(cfg)?;
    let results = run_trials(cfg, &data)?;
    let mean = summarize(&results);

    create_dir(&cfg.out)?;
    for t in &results {
        write_trial(&trial_dir(&cfg.out, t.summary.trial), t)?;
    }
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "command": "train",
            "config": cfg,
            "inputs": data.source,
            "data_shape": [data.x.rows(), data.x.cols()],
            "classes": data.classes,
            "trials": results.iter().map(|r| &r.summary).collect::<Vec<_>>(),
            "mean": mean,
        }),
    )?;
    if let Some(w) = &mean.warm_start {
        print_metrics("warm start", w);
    }
    print_metrics(&format!("{:?} mean over {} trial(s)", cfg.method, cfg.trials).to_lowercase(), &mean.layers);
    Ok(results)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub files: Vec<HashedFile>,
    pub layers: Vec<LayerMetrics>,
}

/// Scores the A-matrices stored in `cfg.model` on the configured data.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    let Some(model) = cfg.model.as_deref() else {
        bail!("eval needs --model DIR");
    };
    if !model.is_dir() {
        bail!("model directory {} does not exist", model.display());
    }
    let data = dataset::load(cfg)?;
    let mut a = Vec::new();
    let mut files = Vec::new();
    loop {
        let p = model.join(format!("A{}.csv", a.len()));
        if !p.exists() {
            break;
        }
        files.push(HashedFile::read(&p)?);
        a.push(neural_nmf::data::read_matrix_csv(&p).with_context(|| format!("parsing {}", p.display()))?);
    }
    if a.is_empty() {
        bail!("no A0.csv in {}", model.display());
    }
    let b_path = model.join("B.csv");
    let b = if b_path.exists() {
        files.push(HashedFile::read(&b_path)?);
        Some(neural_nmf::data::read_matrix_csv(&b_path).with_context(|| format!("parsing {}", b_path.display()))?)
    } else {
        None
    };
    if a[0].rows() != data.x.rows() {
        bail!("model expects {} rows but the data has {}", a[0].rows(), data.x.rows());
    }
    let stack = forward(a, &data.x).context("forward pass")?;
    let labels = data.labels.as_deref().map(|l| (l, data.classes));
    let layers = layer_metrics(&data.x, stack.a_list(), stack.s_list(), b.as_ref(), labels, None)?;
    let report = EvalReport {
        model: model.display().to_string(),
        files,
        layers,
    };
    create_dir(&cfg.out)?;
    write_json(
        &cfg.out.join("eval.json"),
        &json!({
            "command": "eval",
            "config": cfg,
            "inputs": data.source,
            "model": &report,
        }),
    )?;
    print_metrics("eval", &report.layers);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCheck {
    pub loss: String,
    pub passed: bool,
    pub max_rel: f64,
    pub compared: usize,
    pub skipped: usize,
    pub stable_fraction: f64,
    pub layer_max_rel: Vec<f64>,
    /// First few failing probes as `(layer, row, col)`.
    pub failures: Vec<(usize, usize, usize)>,
    pub failure_count: usize,
}

impl LossCheck {
    fn new(loss: &str, r: &GradReport) -> Self {
        Self {
            loss: loss.to_string(),
            passed: r.passed(),
            max_rel: r.max_rel(),
            compared: r.compared(),
            skipped: r.skipped(),
            stable_fraction: r.stable_fraction(),
            layer_max_rel: r.layers.iter().map(|l| l.max_rel).collect(),
            failures: r.failures.iter().take(20).copied().collect(),
            failure_count: r.failures.len(),
        }
    }
}

/// Seeded random instance: `X`, the A-matrices, and class labels.
pub fn gradcheck_instance(cfg: &RunConfig) -> (DenseMatrix, Vec<DenseMatrix>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = DenseMatrix::from_fn(cfg.check_rows, cfg.check_cols, |_, _| rng.gen::<f64>());
    let mut prev = cfg.check_rows;
    let a = cfg
        .check_ranks
        .iter()
        .map(|&k| {
            let m = DenseMatrix::from_fn(prev, k, |_, _| rng.gen::<f64>());
            prev = k;
            m
        })
        .collect();
    let classes = 3;
    let labels = (0..cfg.check_cols).map(|j| j % classes).collect();
    (x, a, labels)
}

/// Checks all three loss kinds on the seeded instance.
pub fn gradcheck_losses(cfg: &RunConfig) -> Result<Vec<LossCheck>> {
    let (x, a, labels) = gradcheck_instance(cfg);
    for (l, m) in a.iter().enumerate() {
        let need = if l == 0 { cfg.check_rows } else { cfg.check_ranks[l - 1] };
        if m.cols() > need {
            bail!("check_ranks must be nonincreasing and at most check_rows; layer {l} has rank {}", m.cols());
        }
    }
    let mut sup = make_labels(&labels, 0.5, cfg.seed, 3)?;
    sup.lambda = cfg.lambda;
    let classification = LossSpec::classification(sup, cfg.lambda)?
        .with_clamped_b(cfg.clamp_b)
        .with_truncated_b(cfg.b_pinv == BPinv::Truncated);
    let losses = [
        ("reconstruction_final", LossSpec::reconstruction_final()),
        ("reconstruction_all_layers", LossSpec::reconstruction_all_layers()),
        ("reconstruction_classification", classification),
    ];
    let mode = match cfg.probes {
        Probes::All => ProbeMode::All,
        Probes::Sampled => ProbeMode::Sampled {
            per_layer: cfg.samples,
            seed: cfg.seed,
        },
    };
    losses
        .iter()
        .map(|(name, loss)| {
            let r = gradcheck::check(&x, &a, loss, cfg.h, cfg.rtol, mode).with_context(|| format!("checking {name}"))?;
            Ok(LossCheck::new(name, &r))
        })
        .collect()
}

/// Returns whether every loss passed.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let checks = gradcheck_losses(cfg)?;
    let passed = checks.iter().all(|c| c.passed);
    create_dir(&cfg.out)?;
    write_json(
        &cfg.out.join("gradcheck.json"),
        &json!({
            "command": "gradcheck",
            "config": cfg,
            "passed": passed,
            "losses": &checks,
        }),
    )?;
    for c in &checks {
        println!(
            "{} {}: max_rel {:.3e} (rtol {:.1e}), {} compared, {} skipped, {} failing",
            if c.passed { "PASS" } else { "FAIL" },
            c.loss,
            c.max_rel,
            cfg.rtol,
            c.compared,
            c.skipped,
            c.failure_count
        );
    }
    Ok(passed)
}
