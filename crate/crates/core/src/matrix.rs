//! Row-major dense matrices, index sets, and the handful of linear-algebra
//! kernels the factorization code needs.
//!
//! Every operation returns a fresh matrix; nothing aliases its input.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Relative singular-value threshold below which a matrix is treated as rank deficient.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A dense real matrix stored in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape_err("from_rows", cols, bad.len()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Column vector (n x 1).
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(shape_err("from_columns", rows, c.len()));
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_err(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                rhs.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a plain vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(shape_err("matvec", self.cols, v.len()));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ * v` without materializing the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(shape_err("tr_matvec", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(shape_err(
                op,
                format!("{:?}", self.shape()),
                format!("{:?}", rhs.shape()),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: f64, rhs: &Self) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(shape_err(
                "axpy",
                format!("{:?}", self.shape()),
                format!("{:?}", rhs.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamps negative entries to zero.
    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    /// Fails with the first negative (or NaN) entry, if any.
    pub fn check_nonnegative(&self) -> Result<()> {
        match self.data.iter().position(|&v| !(v >= 0.0)) {
            None => Ok(()),
            Some(p) => Err(Error::NegativeEntry {
                row: p / self.cols,
                col: p % self.cols,
                value: self.data[p],
            }),
        }
    }

    /// Copies the submatrix selected by `rows` and `cols`.
    pub fn restrict(&self, rows: Sel<'_>, cols: Sel<'_>) -> Result<Self> {
        rows.check(self.rows)?;
        cols.check(self.cols)?;
        let row_idx = rows.indices(self.rows);
        let col_idx = cols.indices(self.cols);
        let mut out = Self::zeros(row_idx.len(), col_idx.len());
        for (oi, &i) in row_idx.iter().enumerate() {
            let src = self.row(i);
            for (oj, &j) in col_idx.iter().enumerate() {
                out.data[oi * col_idx.len() + oj] = src[j];
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &IndexSet) -> Result<Self> {
        self.restrict(Sel::Set(rows), Sel::All)
    }

    pub fn select_cols(&self, cols: &IndexSet) -> Result<Self> {
        self.restrict(Sel::All, Sel::Set(cols))
    }

    /// Embeds `self` into a `target_rows`-row matrix at the positions in `rows`;
    /// all other rows are zero.
    pub fn scatter_rows(&self, rows: &IndexSet, target_rows: usize) -> Result<Self> {
        if rows.len() != self.rows {
            return Err(shape_err("scatter_rows", rows.len(), self.rows));
        }
        if rows.universe() != target_rows {
            return Err(shape_err("scatter_rows", target_rows, rows.universe()));
        }
        let mut out = Self::zeros(target_rows, self.cols);
        for (src, &dst) in rows.iter().enumerate() {
            out.data[dst * self.cols..(dst + 1) * self.cols].copy_from_slice(self.row(src));
        }
        Ok(out)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut sv: Vec<f64> = self.to_nalgebra().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Fails unless the matrix has full rank `min(rows, cols)` at `rank_tol`.
    pub fn check_full_rank(&self, rank_tol: f64) -> Result<()> {
        let sv = self.singular_values();
        check_spectrum(&sv, rank_tol)
    }

    /// Moore–Penrose pseudoinverse with the default rank tolerance.
    pub fn pinv(&self) -> Result<Self> {
        self.pinv_with_tol(DEFAULT_RANK_TOL)
    }

    /// Moore–Penrose pseudoinverse computed from an SVD.
    ///
    /// The matrix must have full rank (full column rank when tall, full row
    /// rank when wide); otherwise `RankDeficient` is returned. Matrices with a
    /// zero dimension have the empty transpose-shaped pseudoinverse.
    pub fn pinv_with_tol(&self, rank_tol: f64) -> Result<Self> {
        if self.is_empty() {
            return Ok(Self::zeros(self.cols, self.rows));
        }
        let svd = self.to_nalgebra().svd(true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        check_spectrum(&sv, rank_tol)?;
        let u = svd.u.as_ref().expect("svd computed with u");
        let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
        // pinv = V * diag(1/sigma) * U^T
        let mut v_scaled = v_t.transpose();
        for (k, s) in sv.iter().enumerate() {
            v_scaled.column_mut(k).scale_mut(1.0 / s);
        }
        Ok(Self::from_nalgebra(&(v_scaled * u.transpose())))
    }

    /// Pseudoinverse that discards singular values at or below
    /// `rank_tol * sigma_max` instead of failing. Defined for every matrix.
    pub fn pinv_truncated(&self, rank_tol: f64) -> Self {
        if self.is_empty() {
            return Self::zeros(self.cols, self.rows);
        }
        let svd = self.to_nalgebra().svd(true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        let threshold = rank_tol * sv.iter().fold(0.0_f64, |m, &s| m.max(s));
        let u = svd.u.as_ref().expect("svd computed with u");
        let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
        let mut v_scaled = v_t.transpose();
        for (k, s) in sv.iter().enumerate() {
            let inv = if *s > threshold { 1.0 / s } else { 0.0 };
            v_scaled.column_mut(k).scale_mut(inv);
        }
        Self::from_nalgebra(&(v_scaled * u.transpose()))
    }
}

fn check_spectrum(sv: &[f64], rank_tol: f64) -> Result<()> {
    if sv.is_empty() {
        return Ok(());
    }
    let max = sv.iter().fold(0.0_f64, |m, &s| m.max(s));
    let min = sv.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    let threshold = rank_tol * max;
    if !(min > threshold) || max == 0.0 {
        return Err(Error::RankDeficient {
            layer: None,
            sigma_min: min,
            threshold,
        });
    }
    Ok(())
}

/// A strictly increasing set of zero-based positions within `0..universe`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, universe: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidIndexSet(format!(
                    "indices must be strictly increasing, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= universe {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    size: universe,
                });
            }
        }
        Ok(Self { indices, universe })
    }

    pub fn full(universe: usize) -> Self {
        Self {
            indices: (0..universe).collect(),
            universe,
        }
    }

    pub fn empty(universe: usize) -> Self {
        Self {
            indices: Vec::new(),
            universe,
        }
    }

    /// Positions `i` in `0..universe` for which `keep(i)` holds.
    pub fn from_predicate(universe: usize, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            indices: (0..universe).filter(|&i| keep(i)).collect(),
            universe,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = &usize> + '_ {
        self.indices.iter()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> Self {
        Self::from_predicate(self.universe, |i| !self.contains(i))
    }

    /// Gathers `v[i]` for each `i` in the set.
    pub fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| v[i]).collect()
    }

    /// Inverse of [`gather`](Self::gather): places `vals` at the set positions of a
    /// zero vector of length `universe`.
    pub fn scatter(&self, vals: &[f64]) -> Vec<f64> {
        debug_assert_eq!(vals.len(), self.len());
        let mut out = vec![0.0; self.universe];
        for (&i, &v) in self.indices.iter().zip(vals) {
            out[i] = v;
        }
        out
    }
}

/// Row or column selector for [`DenseMatrix::restrict`].
#[derive(Debug, Clone, Copy)]
pub enum Sel<'a> {
    All,
    Set(&'a IndexSet),
}

impl<'a> From<&'a IndexSet> for Sel<'a> {
    fn from(set: &'a IndexSet) -> Self {
        Sel::Set(set)
    }
}

impl Sel<'_> {
    fn check(&self, size: usize) -> Result<()> {
        match self {
            Sel::All => Ok(()),
            Sel::Set(s) if s.universe() == size => Ok(()),
            Sel::Set(s) => match s.as_slice().iter().find(|&&i| i >= size) {
                Some(&index) => Err(Error::IndexOutOfRange { index, size }),
                None => Err(shape_err("restrict", size, s.universe())),
            },
        }
    }

    fn indices(&self, size: usize) -> Vec<usize> {
        match self {
            Sel::All => (0..size).collect(),
            Sel::Set(s) => s.as_slice().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn max_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    /// Inverse of a small SPD matrix by Gauss-Jordan elimination.
    fn gauss_jordan_inverse(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut aug = DenseMatrix::from_fn(n, 2 * n, |i, j| {
            if j < n {
                a.get(i, j)
            } else if j - n == i {
                1.0
            } else {
                0.0
            }
        });
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| aug.get(x, c).abs().total_cmp(&aug.get(y, c).abs()))
                .unwrap();
            for j in 0..2 * n {
                let (u, v) = (aug.get(c, j), aug.get(p, j));
                aug.set(c, j, v);
                aug.set(p, j, u);
            }
            let piv = aug.get(c, c);
            for j in 0..2 * n {
                aug.set(c, j, aug.get(c, j) / piv);
            }
            for r in 0..n {
                if r != c {
                    let f = aug.get(r, c);
                    for j in 0..2 * n {
                        aug.set(r, j, aug.get(r, j) - f * aug.get(c, j));
                    }
                }
            }
        }
        DenseMatrix::from_fn(n, n, |i, j| aug.get(i, j + n))
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn pinv_identity_and_scalar() {
        let i3 = DenseMatrix::identity(3);
        assert!(max_diff(&i3.pinv().unwrap(), &i3) < 1e-15);
        let p = m(&[&[2.0]]).pinv().unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pinv_matches_normal_equations() {
        let a = random(5, 3, 7);
        let at = a.transpose();
        let oracle = gauss_jordan_inverse(&at.matmul(&a).unwrap())
            .matmul(&at)
            .unwrap();
        assert!(max_diff(&a.pinv().unwrap(), &oracle) <= 1e-10);
    }

    #[test]
    fn pinv_wide_matrix() {
        let a = random(3, 6, 3);
        let p = a.pinv().unwrap();
        assert_eq!(p.shape(), (6, 3));
        let aap = a.matmul(&p).unwrap();
        assert!(max_diff(&aap, &DenseMatrix::identity(3)) < 1e-10);
    }

    #[test]
    fn pinv_rank_deficient() {
        let a = m(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        assert!(matches!(a.pinv(), Err(Error::RankDeficient { .. })));
        assert!(matches!(
            DenseMatrix::zeros(3, 2).pinv(),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn pinv_of_empty_is_empty() {
        let a = DenseMatrix::zeros(4, 0);
        assert_eq!(a.pinv().unwrap().shape(), (0, 4));
    }

    #[test]
    fn restrict_examples() {
        let i3 = DenseMatrix::identity(3);
        let rows = IndexSet::new(vec![0, 2], 3).unwrap();
        assert_eq!(
            i3.restrict(Sel::Set(&rows), Sel::All).unwrap(),
            m(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]])
        );
        assert_eq!(i3.restrict(Sel::All, Sel::All).unwrap(), i3);
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = IndexSet::new(vec![1], 2).unwrap();
        let c = IndexSet::new(vec![0], 2).unwrap();
        assert_eq!(a.restrict((&r).into(), (&c).into()).unwrap(), m(&[&[3.0]]));
    }

    #[test]
    fn restrict_out_of_range() {
        let a = DenseMatrix::identity(2);
        let bad = IndexSet::new(vec![0, 4], 5).unwrap();
        assert!(matches!(
            a.select_rows(&bad),
            Err(Error::IndexOutOfRange { index: 4, size: 2 })
        ));
    }

    #[test]
    fn scatter_examples() {
        let t = IndexSet::new(vec![1], 3).unwrap();
        assert_eq!(
            m(&[&[5.0]]).scatter_rows(&t, 3).unwrap(),
            m(&[&[0.0], &[5.0], &[0.0]])
        );
        let a = random(4, 2, 1);
        assert_eq!(a.scatter_rows(&IndexSet::full(4), 4).unwrap(), a);
        assert!(matches!(
            a.scatter_rows(&t, 3),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(DenseMatrix::zeros(2, 3).frobenius(), 0.0);
        assert_eq!(
            m(&[&[1.0, 2.0]]).hadamard(&m(&[&[3.0, 0.0]])).unwrap(),
            m(&[&[3.0, 0.0]])
        );
        assert_eq!(m(&[&[-1.0, 2.0]]).relu(), m(&[&[0.0, 2.0]]));
        assert!(m(&[&[1.0]]).hadamard(&m(&[&[1.0, 2.0]])).is_err());
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![1, 1], 3).is_err());
        assert!(IndexSet::new(vec![2, 1], 3).is_err());
        assert!(IndexSet::new(vec![3], 3).is_err());
        let s = IndexSet::new(vec![0, 2], 4).unwrap();
        assert_eq!(s.complement().as_slice(), &[1, 3]);
        assert_eq!(s.scatter(&s.gather(&[1.0, 2.0, 3.0, 4.0])), vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn matmul_and_matvec_agree() {
        let a = random(4, 3, 11);
        let v = vec![0.5, -1.0, 2.0];
        let via_mat = a.matmul(&DenseMatrix::column(&v)).unwrap();
        assert_eq!(via_mat.col(0), a.matvec(&v).unwrap());
        let w = vec![1.0, 0.0, -2.0, 3.0];
        let tr = a.transpose().matvec(&w).unwrap();
        let direct = a.tr_matvec(&w).unwrap();
        for (x, y) in tr.iter().zip(&direct) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }
}
