//! Acceptance criteria as runnable checks. Each check returns whether it
//! passed and a one-line detail.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use neural_nmf::data::make_labels;
use neural_nmf::engine::{forward, phi, train_from, LossSpec, TrainConfig};
use neural_nmf::matrix::{DenseMatrix, IndexSet, Sel};
use neural_nmf::nmf::{nmf_mu, ssnmf_mu, LayerSpec};
use neural_nmf::nnls::{kkt_check, nnls_column};
use neural_nmf_cli::commands::{self, gradcheck_losses};
use neural_nmf_cli::config::{Method, Supervision};
use neural_nmf_cli::dataset;
use neural_nmf_cli::experiment::{mean_metrics, run_trials, TrialResult};
use neural_nmf_cli::RunConfig;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Verdict {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Runs one check and prints its PASS/FAIL line.
pub fn timed(id: &'static str, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = f();
    let v = Verdict {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} [{}] {}: {} ({:.1} s)",
        if v.passed { "PASS" } else { "FAIL" },
        v.id,
        v.name,
        v.detail,
        v.elapsed.as_secs_f64()
    );
    v
}

pub fn gradient_correctness() -> (bool, String) {
    let mut passing = 0;
    let mut worst = 0.0f64;
    let mut min_stable = 1.0f64;
    for seed in 0..20 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let checks = gradcheck_losses(&cfg).expect("gradient check");
        let ok = checks.iter().all(|c| c.passed && c.stable_fraction >= 0.95);
        passing += ok as usize;
        for c in &checks {
            worst = worst.max(c.max_rel);
            min_stable = min_stable.min(c.stable_fraction);
        }
    }
    (
        passing * 10 >= 20 * 9,
        format!("{passing}/20 seeds pass all three losses; worst rel err {worst:.2e}, min stable fraction {min_stable:.3}"),
    )
}

/// Minimizer over every support whose unconstrained least-squares solution
/// is nonnegative, each solved through its own SVD.
fn enumerate_nnls(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let k = a.cols();
    let xv = DVector::from_column_slice(x);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let cols: Vec<usize> = (0..k).filter(|c| mask & (1 << c) != 0).collect();
        let mut s = vec![0.0; k];
        if !cols.is_empty() {
            let sub = DMatrix::from_fn(a.rows(), cols.len(), |i, j| a.get(i, cols[j]));
            let sol = sub.svd(true, true).solve(&xv, 1e-14).expect("svd solve");
            if sol.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (c, v) in cols.iter().zip(sol.iter()) {
                s[*c] = *v;
            }
        }
        let r: f64 = a.matvec(&s).unwrap().iter().zip(x).map(|(f, v)| (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, s));
        }
    }
    best.unwrap().1
}

pub fn nnls_oracle() -> (bool, String) {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=4);
        let m = rng.gen_range(k..=k + 4);
        let a = DenseMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (s, support) = nnls_column(&a, &x, 1e-10).expect("nnls");
        let want = enumerate_nnls(&a, &x);
        let want_support: Vec<usize> = (0..k).filter(|&i| want[i] > 0.0).collect();
        let diff = s.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        let kkt_ok = kkt_check(&a, &x, &s, 1e-8).unwrap().0;
        if support.as_slice() != want_support.as_slice() || diff > 1e-9 || !kkt_ok {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        mismatches == 0 && secs < 10.0,
        format!("{mismatches}/500 mismatches, max coefficient diff {worst:.1e}"),
    )
}

fn trial_config(ranks: &[usize], supervision: Supervision, gamma: f64, iters: usize) -> RunConfig {
    RunConfig {
        method: Method::Neural,
        ranks: ranks.to_vec(),
        supervision,
        gamma,
        iters,
        trials: 25,
        ..RunConfig::default()
    }
}

fn run(cfg: &RunConfig) -> Result<Vec<TrialResult>, String> {
    let data = dataset::load(cfg).map_err(|e| format!("{e:#}"))?;
    run_trials(cfg, &data).map_err(|e| format!("{e:#}"))
}

fn last_recon(results: &[TrialResult]) -> (f64, f64) {
    let neural = mean_metrics(results.iter().map(|r| r.summary.layers.as_slice()));
    let warm = mean_metrics(results.iter().map(|r| r.summary.warm_start.as_deref().unwrap()));
    (neural.last().unwrap().recon_error, warm.last().unwrap().recon_error)
}

pub fn one_layer_accuracy() -> (bool, String) {
    match run(&trial_config(&[9], Supervision::None, 1e-3, 500)) {
        Err(e) => (false, e),
        Ok(r) => {
            let acc = mean_metrics(r.iter().map(|t| t.summary.layers.as_slice()))[0].accuracy.unwrap();
            (acc >= 0.95, format!("mean accuracy {acc:.4} (need >= 0.95)"))
        }
    }
}

pub fn two_layer_recon() -> (bool, String) {
    match run(&trial_config(&[9, 4], Supervision::None, 1e-3, 500)) {
        Err(e) => (false, e),
        Ok(r) => {
            let (n, h) = last_recon(&r);
            (n < h, format!("mean recon error neural {n:.4} vs HNMF {h:.4} (need neural < HNMF)"))
        }
    }
}

pub fn three_layer_recon() -> (bool, String) {
    match run(&trial_config(&[9, 4, 2], Supervision::None, 1e-4, 2000)) {
        Err(e) => (false, e),
        Ok(r) => {
            let (n, h) = last_recon(&r);
            (
                n <= 0.75 * h,
                format!("mean recon error neural {n:.4} vs HNMF {h:.4}, ratio {:.3} (need <= 0.75)", n / h),
            )
        }
    }
}

pub fn three_layer_semisupervised() -> (bool, String) {
    match run(&trial_config(&[9, 4, 2], Supervision::Semi(0.4), 1e-4, 2000)) {
        Err(e) => (false, e),
        Ok(r) => {
            let m = mean_metrics(r.iter().map(|t| t.summary.layers.as_slice()));
            let last = m.last().unwrap();
            let acc = last.accuracy.unwrap();
            (
                acc >= 0.9,
                format!(
                    "mean accuracy {acc:.4}, on unlabeled columns {:.4} (need >= 0.9)",
                    last.accuracy_unlabeled.unwrap()
                ),
            )
        }
    }
}

pub fn hnmf_monotone() -> (bool, String) {
    let cfg = RunConfig {
        method: Method::Hnmf,
        ranks: vec![9, 4, 2],
        trials: 25,
        ..RunConfig::default()
    };
    match run(&cfg) {
        Err(e) => (false, e),
        Ok(r) => {
            let bad = r
                .iter()
                .filter(|t| t.summary.fit.windows(2).any(|w| w[0].recon_error > w[1].recon_error))
                .count();
            let m = mean_metrics(r.iter().map(|t| t.summary.fit.as_slice()));
            let errs: Vec<String> = m.iter().map(|l| format!("{:.4}", l.recon_error)).collect();
            (bad == 0, format!("{bad}/25 trials violate; mean per-layer error [{}]", errs.join(", ")))
        }
    }
}

pub fn mu_monotone() -> (bool, String) {
    let increase = |t: &[f64]| t.windows(2).map(|w| (w[1] - w[0]) / w[0].max(1.0)).fold(f64::NEG_INFINITY, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseMatrix::from_fn(20, 15, |_, _| rng.gen::<f64>());
        let labels: Vec<usize> = (0..15).map(|_| rng.gen_range(0..3)).collect();
        worst = worst.max(increase(&nmf_mu(&x, 4, 200, seed).unwrap().objective_trace));
        let sup = make_labels(&labels, 0.5, seed, 3).unwrap();
        worst = worst.max(increase(&ssnmf_mu(&x, &sup, 4, 200, seed).unwrap().objective_trace));
    }
    (worst <= 1e-12, format!("largest relative change between steps {worst:.2e} over 200 traces (slack 1e-12)"))
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

fn stack_instance(seed: u64, rows: usize, cols: usize, ranks: &[usize]) -> (DenseMatrix, Vec<DenseMatrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(rows, cols, &mut rng);
    let spec = LayerSpec::new(ranks.to_vec()).unwrap();
    let a = (0..ranks.len())
        .map(|l| {
            let (r, c) = spec.a_shape(l, rows);
            uniform(r, c, &mut rng)
        })
        .collect();
    (x, a)
}

pub fn structural_invariants() -> (bool, String) {
    let start = Instant::now();
    let ranks = prop_oneof![Just(vec![3]), Just(vec![4, 2]), Just(vec![5, 3, 1]), Just(vec![4, 3, 2])];
    let mut runner = TestRunner::new(PropConfig {
        cases: 48,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let mut failures = Vec::new();

    let r = runner.run(&(any::<u64>(), ranks.clone(), 1e-4f64..1e-2, any::<bool>()), |(seed, ranks, gamma, all)| {
        let (x, a) = stack_instance(seed, 9, 8, &ranks);
        let loss = if all { LossSpec::reconstruction_all_layers() } else { LossSpec::reconstruction_final() };
        let cfg = TrainConfig {
            step_size: gamma,
            max_outer_iters: 15,
            seed,
            kkt_tol: Some(1e-8),
            ..TrainConfig::default()
        };
        let out = train_from(&x, a, &cfg, &loss).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for l in 0..out.stack.depth() {
            prop_assert!(out.stack.a(l).is_nonnegative() && out.stack.s(l).is_nonnegative());
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("training consistency: {e}"));
    }

    let r = runner.run(&(any::<u64>(), ranks), |(seed, ranks)| {
        let (x, a) = stack_instance(seed, 9, 6, &ranks);
        let stack = forward(a, &x).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for m in 0..x.cols() {
            for l1 in 0..stack.depth() {
                for l2 in l1 + 1..stack.depth() {
                    let full = phi(&stack, l1, l2, m).unwrap();
                    let via = phi(&stack, l1 + 1, l2, m)
                        .unwrap()
                        .restrict(Sel::All, Sel::Set(stack.support(l1, m)))
                        .unwrap()
                        .matmul(stack.support_pinv(l1, m))
                        .unwrap();
                    prop_assert!(full.sub(&via).unwrap().max_abs() <= 1e-10);
                }
            }
        }
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("phi recursion: {e}"));
    }

    let r = runner.run(&(any::<u64>(), 1usize..8, 1usize..8, any::<u8>()), |(seed, rows, cols, mask)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = uniform(rows, cols, &mut rng);
        let set = IndexSet::from_predicate(rows, |i| mask & (1 << i) != 0);
        let picked = m.select_rows(&set).unwrap();
        let back = picked.scatter_rows(&set, rows).unwrap();
        prop_assert_eq!(back.select_rows(&set).unwrap(), picked);
        let v = m.col(0);
        let rest = set.complement();
        let rebuilt: Vec<f64> = set
            .scatter(&set.gather(&v))
            .iter()
            .zip(rest.scatter(&rest.gather(&v)))
            .map(|(a, b)| a + b)
            .collect();
        prop_assert_eq!(rebuilt, v);
        Ok(())
    });
    if let Err(e) = r {
        failures.push(format!("restrict/scatter: {e}"));
    }

    let secs = start.elapsed().as_secs_f64();
    if failures.is_empty() {
        (secs < 60.0, "4 properties x 48 cases hold".to_string())
    } else {
        (false, failures.join("; "))
    }
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

pub fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["first", "second"] {
        let cfg = RunConfig {
            ranks: vec![9, 4],
            supervision: Supervision::Semi(0.4),
            iters: 100,
            trials: 2,
            seed: 11,
            out: tmp.path().join(name),
            ..RunConfig::default()
        };
        if let Err(e) = commands::train(&cfg) {
            return (false, format!("{e:#}"));
        }
        dirs.push(cfg.out);
    }
    let files = csv_files(&dirs[0]);
    if files != csv_files(&dirs[1]) {
        return (false, "different file sets".into());
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(dirs[0].join(f)).unwrap() != fs::read(dirs[1].join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    (
        differing.is_empty() && !files.is_empty(),
        format!("{} CSV files compared, {} differ", files.len(), differing.len()),
    )
}
