//! Closed-form partial derivatives of the NNLS map `q(A, x)` at a
//! support-stable point with support `T`.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, IndexSet};

/// `∂q/∂x`, a `k x N` matrix: rows in `T` equal `pinv(A[:, T])`, all others zero.
pub fn dq_dx(a: &DenseMatrix, support: &IndexSet) -> Result<DenseMatrix> {
    check_support(a, support)?;
    let p = a.select_cols(support)?.pinv()?;
    p.scatter_rows(support, a.cols())
}

/// `∂q/∂A[i, :]`, a `k x k` matrix whose `(α, β)` entry is `∂q_α / ∂A[i, β]`.
///
/// With `P = pinv(A[:, T])` the `(T, T)` block is
/// `-P[:, i] (P x)ᵀ + ((I - A[:, T] P) x)_i P Pᵀ`; every other entry is zero.
pub fn dq_da_row(a: &DenseMatrix, x: &[f64], support: &IndexSet, i: usize) -> Result<DenseMatrix> {
    check_support(a, support)?;
    if i >= a.rows() {
        return Err(Error::IndexOutOfRange {
            index: i,
            size: a.rows(),
        });
    }
    let k = a.cols();
    let mut out = DenseMatrix::zeros(k, k);
    if support.is_empty() {
        return Ok(out);
    }
    let a_t = a.select_cols(support)?;
    let p = a_t.pinv()?;
    let s_t = p.matvec(x)?;
    let fitted = a_t.matvec(&s_t)?;
    let resid_i = x[i] - fitted[i];
    let ppt = p.matmul(&p.transpose())?;
    let t = support.as_slice();
    for (ra, &alpha) in t.iter().enumerate() {
        for (cb, &beta) in t.iter().enumerate() {
            let v = -p.get(ra, i) * s_t[cb] + resid_i * ppt.get(ra, cb);
            out.set(alpha, beta, v);
        }
    }
    Ok(out)
}

fn check_support(a: &DenseMatrix, support: &IndexSet) -> Result<()> {
    if support.universe() != a.cols() {
        return Err(crate::error::shape_err(
            "support universe",
            a.cols(),
            support.universe(),
        ));
    }
    Ok(())
}
