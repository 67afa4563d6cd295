//! Neural NMF: hierarchical nonnegative matrix factorization whose factor
//! matrices are trained end to end by backpropagating through the
//! nonnegative least-squares solves that define each layer.
//!
//! The crate also ships the multiplicative-update baselines (NMF, SSNMF,
//! sequential hierarchical NMF), a synthetic hierarchical dataset, evaluation
//! metrics, and a finite-difference gradient checker.

// `!(a >= b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod nmf;
pub mod nnls;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, IndexSet, Sel};
