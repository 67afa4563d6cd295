//! Exact-support nonnegative least squares.
//!
//! `q(A, X) = argmin_{S >= 0} ||X - A S||` is solved column by column with the
//! Lawson–Hanson active-set method. The active-set iterations run on the Gram
//! matrix `AᵀA`; once the support `T` is known the coefficients are recomputed
//! as `pinv(A[:, T]) x`, so the returned solution satisfies the support formula
//! to rounding and the restricted pseudoinverses can be reused by the backward
//! pass.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::matrix::{DenseMatrix, IndexSet, DEFAULT_RANK_TOL};

/// Entries at or below this value are snapped to exactly zero.
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    /// Dual-feasibility tolerance for the entering test, scaled by `max(1, |Aᵀx|∞)`.
    pub tol: f64,
    pub support_tol: f64,
    pub rank_tol: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            support_tol: SUPPORT_TOL,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl NnlsOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Columnwise NNLS result.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    /// k x M, zero off each column's support.
    pub coefficients: DenseMatrix,
    pub supports: Vec<IndexSet>,
    pub kkt_residuals: Vec<f64>,
    /// `pinv(A[:, T_m])` per column; columns with equal supports share one matrix.
    pub support_pinvs: Vec<Arc<DenseMatrix>>,
}

impl NnlsSolution {
    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Solves one column of `q(A, x)`. Returns the coefficients and their support.
pub fn nnls_column(a: &DenseMatrix, x: &[f64], tol: f64) -> Result<(Vec<f64>, IndexSet)> {
    let xm = DenseMatrix::column(x);
    let sol = nnls_matrix_with(a, &xm, &NnlsOptions::with_tol(tol))?;
    let support = sol.supports.into_iter().next().expect("one column");
    Ok((sol.coefficients.col(0), support))
}

pub fn nnls_matrix(a: &DenseMatrix, x: &DenseMatrix, tol: f64) -> Result<NnlsSolution> {
    nnls_matrix_with(a, x, &NnlsOptions::with_tol(tol))
}

/// Columnwise NNLS with explicit options. Columns are solved in parallel; the
/// output does not depend on scheduling.
pub fn nnls_matrix_with(a: &DenseMatrix, x: &DenseMatrix, opts: &NnlsOptions) -> Result<NnlsSolution> {
    if a.rows() != x.rows() {
        return Err(shape_err("nnls_matrix", a.rows(), x.rows()));
    }
    let k = a.cols();
    let m = x.cols();
    a.check_full_rank(opts.rank_tol)?;
    let gram = a.transpose().matmul(a)?;

    let columns: Vec<Vec<f64>> = (0..m).map(|j| x.col(j)).collect();
    let supports: Vec<IndexSet> = columns
        .par_iter()
        .map(|xc| {
            let b = a.tr_matvec(xc)?;
            active_set_support(&gram, &b, opts)
        })
        .collect::<Result<_>>()?;

    // Restricted pseudoinverses, one per distinct support, in first-seen order.
    let mut distinct: Vec<IndexSet> = Vec::new();
    let mut slot: HashMap<&IndexSet, usize> = HashMap::new();
    let mut column_slot = Vec::with_capacity(m);
    for t in &supports {
        let next = distinct.len();
        let s = *slot.entry(t).or_insert_with(|| {
            distinct.push(t.clone());
            next
        });
        column_slot.push(s);
    }
    let pinvs: Vec<Arc<DenseMatrix>> = distinct
        .par_iter()
        .map(|t| Ok(Arc::new(a.select_cols(t)?.pinv_with_tol(opts.rank_tol)?)))
        .collect::<Result<_>>()?;

    let solved: Vec<(Vec<f64>, IndexSet, Arc<DenseMatrix>, f64)> = columns
        .par_iter()
        .zip(column_slot.par_iter())
        .map(|(xc, &s)| polish(a, xc, distinct[s].clone(), pinvs[s].clone(), opts))
        .collect::<Result<_>>()?;

    let mut coefficients = DenseMatrix::zeros(k, m);
    let mut supports = Vec::with_capacity(m);
    let mut kkt_residuals = Vec::with_capacity(m);
    let mut support_pinvs = Vec::with_capacity(m);
    for (j, (s, t, p, r)) in solved.into_iter().enumerate() {
        coefficients.set_col(j, &s);
        supports.push(t);
        support_pinvs.push(p);
        kkt_residuals.push(r);
    }
    Ok(NnlsSolution {
        coefficients,
        supports,
        kkt_residuals,
        support_pinvs,
    })
}

/// Recomputes the coefficients on the support from the pseudoinverse. Any entry
/// that falls to the support tolerance is dropped and the support re-solved.
fn polish(
    a: &DenseMatrix,
    x: &[f64],
    mut support: IndexSet,
    mut pinv: Arc<DenseMatrix>,
    opts: &NnlsOptions,
) -> Result<(Vec<f64>, IndexSet, Arc<DenseMatrix>, f64)> {
    loop {
        let mut s_t = pinv.matvec(x)?;
        // One refinement step; analytically a no-op since pinv(A_T) A_T = I.
        let fitted = a.select_cols(&support)?.matvec(&s_t)?;
        let resid: Vec<f64> = x.iter().zip(&fitted).map(|(v, f)| v - f).collect();
        for (v, d) in s_t.iter_mut().zip(pinv.matvec(&resid)?) {
            *v += d;
        }
        if s_t.iter().all(|&v| v > opts.support_tol) {
            let s = support.scatter(&s_t);
            let (_, residual) = kkt_check(a, x, &s, f64::INFINITY)?;
            return Ok((s, support, pinv, residual));
        }
        let kept: Vec<usize> = support
            .iter()
            .zip(&s_t)
            .filter(|(_, &v)| v > opts.support_tol)
            .map(|(&i, _)| i)
            .collect();
        support = IndexSet::new(kept, a.cols())?;
        pinv = Arc::new(a.select_cols(&support)?.pinv_with_tol(opts.rank_tol)?);
    }
}

/// Lawson–Hanson active-set iterations on the normal equations `G s = b`
/// (`G = AᵀA`, `b = Aᵀx`). Returns the passive (support) set.
fn active_set_support(gram: &DenseMatrix, b: &[f64], opts: &NnlsOptions) -> Result<IndexSet> {
    let k = gram.rows();
    let max_iter = 3 * k.max(1);
    let tol = opts.tol * b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut passive = vec![false; k];
    let mut s = vec![0.0; k];
    let mut iterations = 0;

    loop {
        // w = b - G s, the negative gradient of 0.5 ||x - A s||^2.
        let w: Vec<f64> = (0..k)
            .map(|i| b[i] - gram.row(i).iter().zip(&s).map(|(g, v)| g * v).sum::<f64>())
            .collect();
        let mut entering = None;
        let mut best = tol;
        for j in 0..k {
            if !passive[j] && w[j] > best {
                best = w[j];
                entering = Some(j);
            }
        }
        let Some(j) = entering else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NonConvergence {
                iterations: max_iter,
            });
        }
        passive[j] = true;

        let mut inner = 0;
        loop {
            let p: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let z_p = solve_spd_subsystem(gram, b, &p)?;
            if z_p.iter().all(|&v| v > 0.0) {
                for (&i, &v) in p.iter().zip(&z_p) {
                    s[i] = v;
                }
                break;
            }
            inner += 1;
            if inner > max_iter {
                return Err(Error::NonConvergence {
                    iterations: max_iter,
                });
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            let mut blocking = p[0];
            for (&i, &z) in p.iter().zip(&z_p) {
                if z <= 0.0 {
                    let denom = s[i] - z;
                    let ratio = if denom > 0.0 { s[i] / denom } else { 0.0 };
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = i;
                    }
                }
            }
            for (&i, &z) in p.iter().zip(&z_p) {
                s[i] += alpha * (z - s[i]);
                if i == blocking || s[i] <= opts.support_tol {
                    s[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&v| v) {
                break;
            }
        }
    }

    Ok(IndexSet::from_predicate(k, |i| passive[i] && s[i] > opts.support_tol))
}

/// Solves `G[p, p] z = b[p]` by Cholesky factorization.
fn solve_spd_subsystem(gram: &DenseMatrix, b: &[f64], p: &[usize]) -> Result<Vec<f64>> {
    let n = p.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = gram.get(p[i], p[j]);
            for r in 0..j {
                sum -= l[i * n + r] * l[j * n + r];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::RankDeficient {
                        layer: None,
                        sigma_min: sum.max(0.0).sqrt(),
                        threshold: 0.0,
                    });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[p[i]];
        for r in 0..i {
            sum -= l[i * n + r] * y[r];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for r in i + 1..n {
            sum -= l[r * n + i] * z[r];
        }
        z[i] = sum / l[i * n + i];
    }
    Ok(z)
}

/// KKT certificate for `min_{s >= 0} ||x - A s||`.
///
/// The residual is the largest of: the most negative entry of `s`, the most
/// negative entry of `Aᵀ(As - x)`, and the largest `|s_i (Aᵀ(As - x))_i|`.
pub fn kkt_check(a: &DenseMatrix, x: &[f64], s: &[f64], tol: f64) -> Result<(bool, f64)> {
    if x.len() != a.rows() {
        return Err(shape_err("kkt_check", a.rows(), x.len()));
    }
    if s.len() != a.cols() {
        return Err(shape_err("kkt_check", a.cols(), s.len()));
    }
    let fitted = a.matvec(s)?;
    let resid: Vec<f64> = fitted.iter().zip(x).map(|(f, xi)| f - xi).collect();
    let grad = a.tr_matvec(&resid)?;
    let mut residual = 0.0_f64;
    for (&si, &gi) in s.iter().zip(&grad) {
        residual = residual.max(-si).max(-gi).max((si * gi).abs());
    }
    Ok((residual <= tol, residual))
}
