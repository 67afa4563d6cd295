//! Forward propagation through stacked NNLS layers and analytic
//! backpropagation to the A-matrices.
//!
//! The A-matrices are the independent variables. Each layer's coefficients are
//! defined by `S(ℓ) = q(A(ℓ), S(ℓ-1))` with `S(-1) = X`, where `q` is the NNLS
//! map from [`crate::nnls`].

mod backprop;
mod derivs;
mod loss;
mod train;

use std::sync::Arc;

pub use backprop::{backprop, grad_a, grad_a_by_paths, phi, GradientStack};
pub use derivs::{dq_da_row, dq_dx};
pub use loss::{compute_b, compute_b_clamped, Loss, LossEval, LossKind, LossSpec};
pub use train::{train, train_from, TrainConfig, TrainOutcome};

use crate::error::{shape_err, Error, Result};
use crate::matrix::{DenseMatrix, IndexSet};
use crate::nnls::{nnls_matrix_with, NnlsOptions};

/// A-matrices together with the S-matrices and supports they induce.
#[derive(Debug, Clone)]
pub struct FactorStack {
    x: DenseMatrix,
    a: Vec<DenseMatrix>,
    s: Vec<DenseMatrix>,
    supports: Vec<Vec<IndexSet>>,
    support_pinvs: Vec<Vec<Arc<DenseMatrix>>>,
    kkt_residuals: Vec<Vec<f64>>,
}

impl FactorStack {
    pub fn depth(&self) -> usize {
        self.a.len()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn a(&self, layer: usize) -> &DenseMatrix {
        &self.a[layer]
    }

    pub fn a_list(&self) -> &[DenseMatrix] {
        &self.a
    }

    pub fn into_a_list(self) -> Vec<DenseMatrix> {
        self.a
    }

    pub fn s(&self, layer: usize) -> &DenseMatrix {
        &self.s[layer]
    }

    pub fn s_list(&self) -> &[DenseMatrix] {
        &self.s
    }

    pub fn s_last(&self) -> &DenseMatrix {
        self.s.last().expect("nonempty stack")
    }

    /// `S(ℓ-1)`, i.e. X for layer 0.
    pub fn layer_input(&self, layer: usize) -> &DenseMatrix {
        if layer == 0 {
            &self.x
        } else {
            &self.s[layer - 1]
        }
    }

    pub fn support(&self, layer: usize, column: usize) -> &IndexSet {
        &self.supports[layer][column]
    }

    pub fn supports(&self, layer: usize) -> &[IndexSet] {
        &self.supports[layer]
    }

    /// `pinv(A(ℓ)[:, T_m(ℓ)])` as computed by the forward pass.
    pub fn support_pinv(&self, layer: usize, column: usize) -> &DenseMatrix {
        &self.support_pinvs[layer][column]
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals
            .iter()
            .flatten()
            .fold(0.0, |m, &r| m.max(r))
    }

    /// True when every layer and column has the same support in both stacks.
    pub fn same_supports(&self, other: &FactorStack) -> bool {
        self.supports == other.supports
    }

    /// `A(0) ... A(ℓ)`.
    pub fn a_product(&self, layer: usize) -> Result<DenseMatrix> {
        crate::nmf::a_chain(&self.a[..=layer])
    }

    /// Re-solves every layer from the stored A-matrices and verifies that
    /// the stored S-matrices satisfy the NNLS optimality conditions.
    pub fn check_consistency(&self, kkt_tol: f64) -> Result<()> {
        for layer in 0..self.depth() {
            self.a[layer].check_nonnegative()?;
            let input = self.layer_input(layer);
            let mut worst = 0.0_f64;
            for m in 0..input.cols() {
                let (_, r) = crate::nnls::kkt_check(
                    &self.a[layer],
                    &input.col(m),
                    &self.s[layer].col(m),
                    f64::INFINITY,
                )?;
                worst = worst.max(r);
            }
            let resolved = nnls_matrix_with(&self.a[layer], input, &NnlsOptions::default())?;
            let drift = resolved.coefficients.sub(&self.s[layer])?.max_abs();
            worst = worst.max(drift);
            if worst > kkt_tol {
                return Err(Error::InconsistentStack {
                    layer,
                    residual: worst,
                });
            }
        }
        Ok(())
    }
}

/// Runs `S(ℓ) = q(A(ℓ), S(ℓ-1))` for every layer.
pub fn forward(a: Vec<DenseMatrix>, x: &DenseMatrix) -> Result<FactorStack> {
    forward_with(a, x, &NnlsOptions::default())
}

pub fn forward_with(a: Vec<DenseMatrix>, x: &DenseMatrix, opts: &NnlsOptions) -> Result<FactorStack> {
    if a.is_empty() {
        return Err(Error::InvalidLayers("at least one A-matrix is required".into()));
    }
    x.check_nonnegative()?;
    let mut rows = x.rows();
    for (layer, f) in a.iter().enumerate() {
        if f.rows() != rows {
            return Err(shape_err("forward: A rows", rows, format!("{} at layer {layer}", f.rows())));
        }
        rows = f.cols();
    }

    let depth = a.len();
    let mut s: Vec<DenseMatrix> = Vec::with_capacity(depth);
    let mut supports = Vec::with_capacity(depth);
    let mut pinvs = Vec::with_capacity(depth);
    let mut kkt = Vec::with_capacity(depth);
    for (layer, f) in a.iter().enumerate() {
        let input = if layer == 0 { x } else { &s[layer - 1] };
        let sol = nnls_matrix_with(f, input, opts).map_err(|e| tag_layer(e, layer))?;
        s.push(sol.coefficients);
        supports.push(sol.supports);
        pinvs.push(sol.support_pinvs);
        kkt.push(sol.kkt_residuals);
    }
    Ok(FactorStack {
        x: x.clone(),
        a,
        s,
        supports,
        support_pinvs: pinvs,
        kkt_residuals: kkt,
    })
}

fn tag_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::RankDeficient {
            sigma_min,
            threshold,
            ..
        } => Error::RankDeficient {
            layer: Some(layer),
            sigma_min,
            threshold,
        },
        other => other,
    }
}
