//! One seeded training trial and the metrics reported for it.

use anyhow::{bail, Context, Result};
use neural_nmf::data::{class_accuracy, fit_classifier, make_labels, one_hot, recon_error_parts};
use neural_nmf::engine::{forward, train, LossSpec, TrainConfig};
use neural_nmf::nmf::{hnmf, nmf_mu, ssnmf_mu, HnmfResult, LayerSpec, SupervisionData};
use neural_nmf::DenseMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BPinv, LossChoice, Method, RunConfig};
use crate::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerMetrics {
    /// `‖X − A(0)···A(ℓ) S(ℓ)‖ / ‖X‖`.
    pub recon_error: f64,
    /// Over every labelled column.
    pub accuracy: Option<f64>,
    /// Over the columns whose labels were hidden during training.
    pub accuracy_unlabeled: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeuralStats {
    pub iterations: usize,
    pub best_iteration: usize,
    pub converged: bool,
    pub initial_loss: f64,
    pub best_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    /// Metrics of the forward pass through the stored A-matrices; `eval`
    /// reproduces these.
    pub layers: Vec<LayerMetrics>,
    /// Metrics of the method's own S-matrices.
    pub fit: Vec<LayerMetrics>,
    /// For Neural NMF, the HNMF warm start it was refined from.
    pub warm_start: Option<Vec<LayerMetrics>>,
    pub neural: Option<NeuralStats>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub summary: TrialSummary,
    pub a: Vec<DenseMatrix>,
    /// Forward-pass S-matrices.
    pub s: Vec<DenseMatrix>,
    /// Classifier applied at the last layer, when training produced one.
    pub b: Option<DenseMatrix>,
    /// `(stage, iteration, value)` objective traces.
    pub history: Vec<(String, usize, f64)>,
}

/// Known-label pattern of a trial.
fn supervision(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<Option<SupervisionData>> {
    let Some(fraction) = cfg.supervision.fraction() else {
        return Ok(None);
    };
    let Some(labels) = &data.labels else {
        bail!("supervision requires labels");
    };
    let mut sup = make_labels(labels, fraction, seed, data.classes)?;
    sup.lambda = cfg.lambda;
    Ok(Some(sup))
}

/// Per-layer metrics. The last layer is scored with `b` when given; other
/// layers use the least-squares classifier fitted to all labels.
pub fn layer_metrics(
    x: &DenseMatrix,
    a: &[DenseMatrix],
    s: &[DenseMatrix],
    b: Option<&DenseMatrix>,
    labels: Option<(&[usize], usize)>,
    hidden: Option<&[bool]>,
) -> Result<Vec<LayerMetrics>> {
    let y = labels.map(|(l, c)| one_hot(l, c)).transpose()?;
    (0..s.len())
        .map(|l| {
            let recon_error = recon_error_parts(x, &a[..=l], &s[l])?;
            let (accuracy, accuracy_unlabeled) = match (labels, &y) {
                (Some((labels, _)), Some(y)) => {
                    let fitted;
                    let b = match b {
                        Some(b) if l + 1 == s.len() => b,
                        _ => {
                            fitted = fit_classifier(y, &s[l])?;
                            &fitted
                        }
                    };
                    let all = class_accuracy(b, &s[l], labels, &vec![true; labels.len()])?;
                    let unlabeled = hidden.map(|m| class_accuracy(b, &s[l], labels, m)).transpose()?;
                    (Some(all), unlabeled)
                }
                _ => (None, None),
            };
            Ok(LayerMetrics {
                recon_error,
                accuracy,
                accuracy_unlabeled,
            })
        })
        .collect()
}

fn traces(prefix: &str, traces: &[Vec<f64>]) -> Vec<(String, usize, f64)> {
    traces
        .iter()
        .enumerate()
        .flat_map(|(l, t)| t.iter().enumerate().map(move |(i, &v)| (format!("{prefix}{l}"), i, v)))
        .collect()
}

pub fn run_trial(cfg: &RunConfig, data: &Dataset, trial: usize) -> Result<TrialResult> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let x = &data.x;
    let sup = supervision(cfg, data, seed)?;
    let hidden: Option<Vec<bool>> = match (&sup, cfg.supervision.fraction()) {
        (Some(s), Some(f)) if f < 1.0 => {
            let known = s.known_columns();
            let mut m = vec![true; x.cols()];
            for j in known {
                m[j] = false;
            }
            Some(m)
        }
        _ => None,
    };
    let labels = data.labels.as_deref().map(|l| (l, data.classes));
    let metrics = |a: &[DenseMatrix], s: &[DenseMatrix], b: Option<&DenseMatrix>| {
        layer_metrics(x, a, s, b, labels, hidden.as_deref())
    };
    let layers = LayerSpec::new(cfg.ranks.clone())?;

    let single_rank = || -> Result<usize> {
        match cfg.ranks.as_slice() {
            [k] => Ok(*k),
            _ => bail!("method {:?} factors a single layer; got ranks {:?}", cfg.method, cfg.ranks),
        }
    };

    let (a, b, fit, warm_start, neural, history) = match cfg.method {
        Method::Nmf | Method::Ssnmf => {
            let k = single_rank()?;
            let r = match (&sup, cfg.method) {
                (_, Method::Nmf) => nmf_mu(x, k, cfg.mu_iters, seed)?,
                (Some(s), _) => ssnmf_mu(x, s, k, cfg.mu_iters, seed)?,
                (None, _) => bail!("ssnmf requires supervision other than none"),
            };
            let fit = metrics(std::slice::from_ref(&r.a), std::slice::from_ref(&r.s), r.b.as_ref())?;
            let history = traces("layer", std::slice::from_ref(&r.objective_trace));
            (vec![r.a], r.b, fit, None, None, history)
        }
        Method::Hnmf => {
            let r = hnmf(x, &layers, cfg.mu_iters, seed, sup.as_ref())?;
            let fit = metrics(&r.a, &r.s, r.b.as_ref())?;
            let history = traces("layer", &r.objective_traces);
            (r.a, r.b, fit, None, None, history)
        }
        Method::Neural => {
            let truncate = cfg.b_pinv == BPinv::Truncated;
            let loss = match sup.clone() {
                Some(s) => LossSpec::classification(s, cfg.lambda)?
                    .with_clamped_b(cfg.clamp_b)
                    .with_truncated_b(truncate),
                None => match cfg.loss {
                    LossChoice::Final => LossSpec::reconstruction_final(),
                    LossChoice::AllLayers => LossSpec::reconstruction_all_layers(),
                },
            };
            let warm: HnmfResult = hnmf(x, &layers, cfg.mu_iters, seed, sup.as_ref())?;
            let warm_metrics = metrics(&warm.a, &warm.s, warm.b.as_ref())?;
            let tc = TrainConfig {
                step_size: cfg.gamma,
                max_outer_iters: cfg.iters,
                conv_tol: cfg.conv_tol,
                warm_start_iters: cfg.mu_iters,
                seed,
                kkt_tol: cfg.kkt_tol,
                ..TrainConfig::default()
            };
            let out = train(x, &layers, &tc, &loss, Some(warm.a.clone())).context("neural training")?;
            let b = loss.classifier(out.stack.s_last())?;
            let fit = metrics(out.stack.a_list(), out.stack.s_list(), b.as_ref())?;
            let mut history = traces("warm_layer", &warm.objective_traces);
            history.extend(out.history.iter().enumerate().map(|(i, &v)| ("neural".to_string(), i, v)));
            let stats = NeuralStats {
                iterations: out.iterations,
                best_iteration: out.best_iteration,
                converged: out.converged,
                initial_loss: out.history[0],
                best_loss: out.best_loss(),
            };
            (out.stack.into_a_list(), b, fit, Some(warm_metrics), Some(stats), history)
        }
    };

    let stack = forward(a.clone(), x).context("forward pass through the trained A-matrices")?;
    let layers_metrics = metrics(stack.a_list(), stack.s_list(), b.as_ref())?;
    Ok(TrialResult {
        summary: TrialSummary {
            trial,
            seed,
            layers: layers_metrics,
            fit,
            warm_start,
            neural,
        },
        s: stack.s_list().to_vec(),
        a,
        b,
        history,
    })
}

/// Runs every trial in parallel; results are in trial order.
pub fn run_trials(cfg: &RunConfig, data: &Dataset) -> Result<Vec<TrialResult>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, data, t).with_context(|| format!("trial {t}")))
        .collect()
}

/// Entrywise mean of per-layer metrics; an accuracy is averaged only when
/// every trial reports it.
pub fn mean_metrics<'a>(runs: impl IntoIterator<Item = &'a [LayerMetrics]>) -> Vec<LayerMetrics> {
    let runs: Vec<&[LayerMetrics]> = runs.into_iter().collect();
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    let mean_of = |f: &dyn Fn(&LayerMetrics) -> Option<f64>, l: usize| -> Option<f64> {
        runs.iter().map(|r| f(&r[l])).sum::<Option<f64>>().map(|s| s / n)
    };
    (0..first.len())
        .map(|l| LayerMetrics {
            recon_error: runs.iter().map(|r| r[l].recon_error).sum::<f64>() / n,
            accuracy: mean_of(&|m| m.accuracy, l),
            accuracy_unlabeled: mean_of(&|m| m.accuracy_unlabeled, l),
        })
        .collect()
}
