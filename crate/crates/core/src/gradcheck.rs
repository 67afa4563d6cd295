//! Finite-difference oracle for the analytic A-gradient.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{forward_with, grad_a, FactorStack, GradientStack, Loss};
use crate::error::Result;
use crate::matrix::DenseMatrix;
use crate::nnls::NnlsOptions;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_SAMPLES_PER_LAYER: usize = 200;

/// Which A-entries to probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeMode {
    All,
    Sampled { per_layer: usize, seed: u64 },
}

/// One probed entry: `(layer, row, col)`.
pub type Probe = (usize, usize, usize);

#[derive(Debug, Clone)]
pub struct NumericGradient {
    /// Central differences; entries never probed or skipped are zero.
    pub grad: GradientStack,
    pub probes: Vec<Probe>,
    /// Parallel to `probes`: false when the `+h` and `-h` evaluations
    /// produced different supports somewhere.
    pub stable: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerReport {
    pub max_abs: f64,
    /// Max of `|analytic - numeric| / (1 + |numeric|)`.
    pub max_rel: f64,
    pub compared: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub layers: Vec<LayerReport>,
    pub rtol: f64,
    /// Compared entries whose relative error exceeds `rtol`.
    pub failures: Vec<Probe>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| m.max(l.max_rel))
    }

    pub fn compared(&self) -> usize {
        self.layers.iter().map(|l| l.compared).sum()
    }

    pub fn skipped(&self) -> usize {
        self.layers.iter().map(|l| l.skipped).sum()
    }

    pub fn stable_fraction(&self) -> f64 {
        let total = self.compared() + self.skipped();
        if total == 0 {
            1.0
        } else {
            self.compared() as f64 / total as f64
        }
    }
}

/// NNLS settings tight enough for central differences at `h = 1e-6`.
pub fn probe_nnls_options() -> NnlsOptions {
    NnlsOptions::with_tol(1e-12)
}

pub fn select_probes(a: &[DenseMatrix], mode: ProbeMode) -> Vec<Probe> {
    let mut probes = Vec::new();
    for (l, f) in a.iter().enumerate() {
        let n = f.rows() * f.cols();
        let picked: Vec<usize> = match mode {
            ProbeMode::All => (0..n).collect(),
            ProbeMode::Sampled { per_layer, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(l as u64));
                let mut v = sample(&mut rng, n, per_layer.min(n)).into_vec();
                v.sort_unstable();
                v
            }
        };
        probes.extend(picked.into_iter().map(|idx| (l, idx / f.cols(), idx % f.cols())));
    }
    probes
}

/// Central differences of the loss in each probed A-entry, re-running the
/// forward pass at every probe point. Quantities the loss derives from the
/// stack without differentiating through them are frozen at the base point.
pub fn finite_diff_loss_grad(
    x: &DenseMatrix,
    a: &[DenseMatrix],
    loss: &dyn Loss,
    h: f64,
    mode: ProbeMode,
) -> Result<NumericGradient> {
    let opts = probe_nnls_options();
    let base = forward_with(a.to_vec(), x, &opts)?;
    let frozen = loss.frozen_at(&base)?;
    let loss: &dyn Loss = frozen.as_deref().unwrap_or(loss);
    let probes = select_probes(a, mode);

    let results: Vec<Result<(f64, bool)>> = probes
        .par_iter()
        .map(|&(l, i, j)| {
            let eval_at = |delta: f64| -> Result<FactorStack> {
                let mut shifted = a.to_vec();
                shifted[l].set(i, j, a[l].get(i, j) + delta);
                forward_with(shifted, x, &opts)
            };
            let plus = eval_at(h)?;
            let minus = eval_at(-h)?;
            let stable = plus.same_supports(&minus);
            let d = (loss.evaluate(&plus)?.value - loss.evaluate(&minus)?.value) / (2.0 * h);
            Ok((d, stable))
        })
        .collect();

    let mut grad = GradientStack::zeros_like(a);
    let mut stable = Vec::with_capacity(probes.len());
    for (&(l, i, j), r) in probes.iter().zip(results) {
        let (d, ok) = r?;
        if ok {
            grad.da[l].set(i, j, d);
        }
        stable.push(ok);
    }
    Ok(NumericGradient { grad, probes, stable })
}

/// Entrywise comparison of an analytic gradient against a numeric one.
pub fn compare(analytic: &GradientStack, numeric: &NumericGradient, rtol: f64) -> GradReport {
    let mut layers = vec![LayerReport::default(); analytic.depth()];
    let mut failures = Vec::new();
    for (&(l, i, j), &ok) in numeric.probes.iter().zip(&numeric.stable) {
        let rep = &mut layers[l];
        if !ok {
            rep.skipped += 1;
            continue;
        }
        rep.compared += 1;
        let a = analytic.da[l].get(i, j);
        let n = numeric.grad.da[l].get(i, j);
        let abs = (a - n).abs();
        let rel = abs / (1.0 + n.abs());
        rep.max_abs = rep.max_abs.max(abs);
        rep.max_rel = rep.max_rel.max(rel);
        if !(rel <= rtol) {
            failures.push((l, i, j));
        }
    }
    GradReport { layers, rtol, failures }
}

/// Checks the analytic gradient of `loss` at `a` against central differences.
pub fn check(
    x: &DenseMatrix,
    a: &[DenseMatrix],
    loss: &dyn Loss,
    h: f64,
    rtol: f64,
    mode: ProbeMode,
) -> Result<GradReport> {
    let base = forward_with(a.to_vec(), x, &probe_nnls_options())?;
    let analytic = grad_a(&base, loss)?;
    let numeric = finite_diff_loss_grad(x, a, loss, h, mode)?;
    Ok(compare(&analytic, &numeric, rtol))
}
