//! Projected gradient descent on the A-matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backprop::backprop;
use super::loss::{Loss, LossSpec};
use super::{forward_with, FactorStack};
use crate::error::{shape_err, Error, Result};
use crate::matrix::DenseMatrix;
use crate::nmf::{hnmf, LayerSpec, DEFAULT_MU_ITERS};
use crate::nnls::NnlsOptions;

/// Scale of the uniform jitter added to an A-matrix that lost full column rank.
pub const RANK_JITTER: f64 = 1e-8;
pub const MAX_JITTER_ATTEMPTS: usize = 3;
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub step_size: f64,
    pub max_outer_iters: usize,
    /// Stop when the relative loss change across `conv_window` iterations
    /// falls below this.
    pub conv_tol: f64,
    pub conv_window: usize,
    /// Multiplicative-update iterations per layer for the warm start.
    pub warm_start_iters: usize,
    pub seed: u64,
    /// When set, the stack is re-verified against this tolerance after every
    /// update.
    pub kkt_tol: Option<f64>,
    pub nnls: NnlsOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            max_outer_iters: 500,
            conv_tol: 1e-6,
            conv_window: 5,
            warm_start_iters: DEFAULT_MU_ITERS,
            seed: 0,
            kkt_tol: None,
            nnls: NnlsOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-loss stack seen.
    pub stack: FactorStack,
    /// Loss before the first update followed by the loss after each update.
    pub history: Vec<f64>,
    /// Index into `history` of the returned stack.
    pub best_iteration: usize,
    /// Number of updates performed.
    pub iterations: usize,
    pub converged: bool,
}

impl TrainOutcome {
    pub fn best_loss(&self) -> f64 {
        self.history[self.best_iteration]
    }
}

/// Trains a stack of the given shape. Without `init` the A-matrices are
/// warm-started from sequential HNMF, supervised at the last layer when the
/// loss carries supervision.
pub fn train(
    x: &DenseMatrix,
    layers: &LayerSpec,
    config: &TrainConfig,
    loss: &LossSpec,
    init: Option<Vec<DenseMatrix>>,
) -> Result<TrainOutcome> {
    layers.validate_for(x.rows())?;
    let a = match init {
        Some(a) => {
            if a.len() != layers.depth() {
                return Err(shape_err("init depth", layers.depth(), a.len()));
            }
            for (l, f) in a.iter().enumerate() {
                let want = layers.a_shape(l, x.rows());
                if f.shape() != want {
                    return Err(shape_err("init A", format!("{want:?} at layer {l}"), format!("{:?}", f.shape())));
                }
            }
            a
        }
        None => {
            let sup = loss.supervision().map(|s| {
                let mut s = s.clone();
                s.lambda = loss.lambda();
                s
            });
            hnmf(x, layers, config.warm_start_iters, config.seed, sup.as_ref())?.a
        }
    };
    train_from(x, a, config, loss)
}

/// Runs projected gradient descent from the given A-matrices.
pub fn train_from(x: &DenseMatrix, a: Vec<DenseMatrix>, config: &TrainConfig, loss: &dyn Loss) -> Result<TrainOutcome> {
    if !(config.step_size >= 0.0 && config.step_size.is_finite()) {
        return Err(Error::InvalidLoss(format!("step size must be nonnegative, got {}", config.step_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stack = forward_robust(a, x, &config.nnls, &mut rng)?;
    let mut eval = loss.evaluate(&stack)?;
    let initial = eval.value;
    let mut history = vec![initial];
    let mut best = (initial, stack.clone(), 0usize);
    let mut above = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_outer_iters {
        let grad = backprop(&stack, &eval.ds, &eval.da)?;
        let a: Vec<DenseMatrix> = stack
            .a_list()
            .iter()
            .zip(&grad.da)
            .map(|(a, g)| {
                let mut next = a.clone();
                next.axpy(-config.step_size, g).expect("gradient shape");
                next.relu()
            })
            .collect();
        stack = forward_robust(a, x, &config.nnls, &mut rng)?;
        if let Some(tol) = config.kkt_tol {
            stack.check_consistency(tol)?;
        }
        eval = loss.evaluate(&stack)?;
        iterations += 1;
        history.push(eval.value);
        if eval.value < best.0 {
            best = (eval.value, stack.clone(), iterations);
        }

        if eval.value > DIVERGENCE_FACTOR * initial {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iteration: iterations,
                    loss: eval.value,
                    initial,
                });
            }
        } else {
            above = 0;
        }

        let n = history.len();
        if config.conv_window > 0 && n > config.conv_window {
            let then = history[n - 1 - config.conv_window];
            let change = (eval.value - then).abs() / then.abs().max(f64::MIN_POSITIVE);
            if change < config.conv_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        stack: best.1,
        history,
        best_iteration: best.2,
        iterations,
        converged,
    })
}

/// Forward pass that jitters a rank-deficient A-matrix and retries.
fn forward_robust(
    mut a: Vec<DenseMatrix>,
    x: &DenseMatrix,
    opts: &NnlsOptions,
    rng: &mut ChaCha8Rng,
) -> Result<FactorStack> {
    let mut attempts = 0;
    loop {
        match forward_with(a.clone(), x, opts) {
            Err(Error::RankDeficient {
                layer: Some(layer),
                sigma_min,
                threshold,
            }) => {
                if attempts == MAX_JITTER_ATTEMPTS {
                    return Err(Error::RankDeficient {
                        layer: Some(layer),
                        sigma_min,
                        threshold,
                    });
                }
                attempts += 1;
                for v in a[layer].as_mut_slice() {
                    *v += RANK_JITTER * rng.gen::<f64>();
                }
            }
            other => return other,
        }
    }
}
