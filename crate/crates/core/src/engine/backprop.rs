//! Gradient of a loss with respect to every A-matrix, with all later
//! S-matrices treated as functions of the earlier A-matrices.

use rayon::prelude::*;

use super::loss::Loss;
use super::FactorStack;
use crate::error::{shape_err, Result};
use crate::matrix::{DenseMatrix, Sel};

/// Columns per parallel work unit. Fixed so that the summation order does not
/// depend on the thread count.
const COLUMN_CHUNK: usize = 8;

/// One gradient matrix per layer, shaped like the corresponding A-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack {
    pub da: Vec<DenseMatrix>,
}

impl GradientStack {
    pub fn zeros_like(a: &[DenseMatrix]) -> Self {
        GradientStack {
            da: a.iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.da.len()
    }

    pub fn layer(&self, layer: usize) -> &DenseMatrix {
        &self.da[layer]
    }

    pub fn max_abs(&self) -> f64 {
        self.da.iter().fold(0.0, |m, d| m.max(d.max_abs()))
    }

    fn add_assign(&mut self, other: &GradientStack) {
        for (a, b) in self.da.iter_mut().zip(&other.da) {
            a.axpy(1.0, b).expect("matching gradient shapes");
        }
    }
}

/// Product of support-restricted pseudoinverses linking layer `l1`'s input
/// column `m` to the supported entries of `S(l2)[:, m]`.
///
/// Shape is `|T_m(l2)| x k(l1-1)`; it is the Jacobian of those entries with
/// respect to `S(l1-1)[:, m]`.
pub fn phi(stack: &FactorStack, l1: usize, l2: usize, m: usize) -> Result<DenseMatrix> {
    if l1 > l2 || l2 >= stack.depth() {
        return Err(shape_err("phi layers", format!("l1 <= l2 < {}", stack.depth()), format!("({l1}, {l2})")));
    }
    let mut acc = stack.support_pinv(l1, m).clone();
    for layer in l1 + 1..=l2 {
        let prev = stack.support(layer - 1, m);
        let step = stack
            .support_pinv(layer, m)
            .restrict(Sel::All, Sel::Set(prev))?;
        acc = step.matmul(&acc)?;
    }
    Ok(acc)
}

/// Full gradient of `loss` with respect to every A-matrix.
pub fn grad_a(stack: &FactorStack, loss: &dyn Loss) -> Result<GradientStack> {
    let eval = loss.evaluate(stack)?;
    backprop(stack, &eval.ds, &eval.da)
}

/// Combines the partials of a loss into the total A-gradient.
///
/// `ds[ℓ]` is the partial with respect to `S(ℓ)` holding every other
/// S-matrix and A-matrix fixed; `da_direct[ℓ]` is the partial with respect to
/// `A(ℓ)` holding all S-matrices fixed.
pub fn backprop(stack: &FactorStack, ds: &[DenseMatrix], da_direct: &[DenseMatrix]) -> Result<GradientStack> {
    check_partials(stack, ds, da_direct)?;
    let cols = stack.x().cols();
    let chunks: Vec<GradientStack> = (0..cols.div_ceil(COLUMN_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = GradientStack::zeros_like(stack.a_list());
            let end = ((c + 1) * COLUMN_CHUNK).min(cols);
            for m in c * COLUMN_CHUNK..end {
                column_contribution(stack, ds, m, &mut g);
            }
            g
        })
        .collect();

    let mut total = GradientStack {
        da: da_direct.to_vec(),
    };
    for g in &chunks {
        total.add_assign(g);
    }
    Ok(total)
}

/// Backward sweep for one column: `e(ℓ)` accumulates `Φᵀ g` over every later
/// layer, so each layer costs a single pseudoinverse product.
fn column_contribution(stack: &FactorStack, ds: &[DenseMatrix], m: usize, out: &mut GradientStack) {
    let mut incoming: Option<Vec<f64>> = None;
    for layer in (0..stack.depth()).rev() {
        let t = stack.support(layer, m);
        let p = stack.support_pinv(layer, m);
        let mut w = t.gather(&ds[layer].col(m));
        if let Some(e_next) = &incoming {
            for (wi, &idx) in w.iter_mut().zip(t.as_slice()) {
                *wi += e_next[idx];
            }
        }
        // p is |T| x k(ℓ-1); e = pᵀ w.
        let e = p.tr_matvec(&w).expect("pinv shape");
        if !t.is_empty() {
            let s_t = t.gather(&stack.s(layer).col(m));
            let input = stack.layer_input(layer).col(m);
            let fitted = stack.a(layer).matvec(&stack.s(layer).col(m)).expect("stack shape");
            let r: Vec<f64> = input.iter().zip(&fitted).map(|(x, f)| x - f).collect();
            let pe = p.matvec(&e).expect("pinv shape");
            let g = &mut out.da[layer];
            for i in 0..g.rows() {
                for (c, &col) in t.as_slice().iter().enumerate() {
                    let v = g.get(i, col) - e[i] * s_t[c] + r[i] * pe[c];
                    g.set(i, col, v);
                }
            }
        }
        incoming = Some(e);
    }
}

/// Reference implementation that forms every path product explicitly and
/// sums the contributions one path at a time. Quadratic in depth; used to
/// cross-check [`backprop`].
pub fn grad_a_by_paths(stack: &FactorStack, loss: &dyn Loss) -> Result<GradientStack> {
    let eval = loss.evaluate(stack)?;
    check_partials(stack, &eval.ds, &eval.da)?;
    let mut total = GradientStack { da: eval.da.clone() };
    let depth = stack.depth();
    for m in 0..stack.x().cols() {
        for l1 in 0..depth {
            let s_col = stack.s(l1).col(m);
            let t1 = stack.support(l1, m);
            let s_t = t1.gather(&s_col);
            let fitted = stack.a(l1).matvec(&s_col)?;
            let r: Vec<f64> = stack
                .layer_input(l1)
                .col(m)
                .iter()
                .zip(&fitted)
                .map(|(x, f)| x - f)
                .collect();
            let p1 = stack.support_pinv(l1, m);
            for l2 in l1..depth {
                let g = stack.support(l2, m).gather(&eval.ds[l2].col(m));
                let d = phi(stack, l1, l2, m)?.tr_matvec(&g)?;
                let pd = p1.matvec(&d)?;
                let u = &mut total.da[l1];
                for i in 0..u.rows() {
                    for (c, &col) in t1.as_slice().iter().enumerate() {
                        u.set(i, col, u.get(i, col) - d[i] * s_t[c] + r[i] * pd[c]);
                    }
                }
            }
        }
    }
    Ok(total)
}

fn check_partials(stack: &FactorStack, ds: &[DenseMatrix], da: &[DenseMatrix]) -> Result<()> {
    if ds.len() != stack.depth() || da.len() != stack.depth() {
        return Err(shape_err(
            "loss partials depth",
            stack.depth(),
            format!("{} / {}", ds.len(), da.len()),
        ));
    }
    for l in 0..stack.depth() {
        if ds[l].shape() != stack.s(l).shape() {
            return Err(shape_err("dL/dS", format!("{:?}", stack.s(l).shape()), format!("{:?}", ds[l].shape())));
        }
        if da[l].shape() != stack.a(l).shape() {
            return Err(shape_err("dL/dA", format!("{:?}", stack.a(l).shape()), format!("{:?}", da[l].shape())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{forward, LossEval};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn random_stack(seed: u64, ranks: &[usize]) -> FactorStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(12, 10, &mut rng);
        let mut rows = 12;
        let mut a = Vec::new();
        for &k in ranks {
            a.push(random(rows, k, &mut rng));
            rows = k;
        }
        forward(a, &x).unwrap()
    }

    /// `‖S(last)‖² / 2`.
    struct HalfSqLast;

    impl Loss for HalfSqLast {
        fn evaluate(&self, stack: &FactorStack) -> Result<LossEval> {
            let d = stack.depth();
            let mut ds: Vec<DenseMatrix> = stack
                .s_list()
                .iter()
                .map(|s| DenseMatrix::zeros(s.rows(), s.cols()))
                .collect();
            ds[d - 1] = stack.s_last().clone();
            Ok(LossEval {
                value: 0.5 * stack.s_last().frobenius_sq(),
                ds,
                da: GradientStack::zeros_like(stack.a_list()).da,
            })
        }
    }

    /// `‖A(0)‖² / 2`, independent of every S.
    struct HalfSqFirstA;

    impl Loss for HalfSqFirstA {
        fn evaluate(&self, stack: &FactorStack) -> Result<LossEval> {
            let mut da = GradientStack::zeros_like(stack.a_list()).da;
            da[0] = stack.a(0).clone();
            Ok(LossEval {
                value: 0.5 * stack.a(0).frobenius_sq(),
                ds: stack
                    .s_list()
                    .iter()
                    .map(|s| DenseMatrix::zeros(s.rows(), s.cols()))
                    .collect(),
                da,
            })
        }
    }

    #[test]
    fn phi_single_layer_is_support_pinv() {
        let stack = random_stack(5, &[5, 3]);
        for m in 0..10 {
            let expected = stack
                .a(1)
                .select_cols(stack.support(1, m))
                .unwrap()
                .pinv()
                .unwrap();
            let got = phi(&stack, 1, 1, m).unwrap();
            assert!(got.sub(&expected).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn phi_identity_layers() {
        let x = DenseMatrix::from_fn(4, 3, |i, j| 1.0 + (i + j) as f64);
        let stack = forward(vec![DenseMatrix::identity(4), DenseMatrix::identity(4)], &x).unwrap();
        for m in 0..3 {
            assert_eq!(phi(&stack, 0, 1, m).unwrap(), DenseMatrix::identity(4));
        }
    }

    #[test]
    fn phi_recursion_holds() {
        for seed in 0..5 {
            let stack = random_stack(seed, &[6, 4, 2]);
            for m in 0..10 {
                for l1 in 0..2 {
                    for l2 in l1 + 1..3 {
                        let full = phi(&stack, l1, l2, m).unwrap();
                        let tail = phi(&stack, l1 + 1, l2, m)
                            .unwrap()
                            .restrict(Sel::All, Sel::Set(stack.support(l1, m)))
                            .unwrap();
                        let via = tail.matmul(stack.support_pinv(l1, m)).unwrap();
                        assert!(full.sub(&via).unwrap().max_abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn phi_matches_chained_jacobian() {
        let stack = random_stack(11, &[5, 3]);
        let h = 1e-6;
        let m = 0;
        let analytic = phi(&stack, 0, 1, m).unwrap();
        let t_last = stack.support(1, m);
        for j in 0..12 {
            let mut xp = stack.x().clone();
            let mut xm = stack.x().clone();
            xp.set(j, m, xp.get(j, m) + h);
            xm.set(j, m, xm.get(j, m) - h);
            let sp = forward(stack.a_list().to_vec(), &xp).unwrap();
            let sm = forward(stack.a_list().to_vec(), &xm).unwrap();
            if !sp.same_supports(&stack) || !sm.same_supports(&stack) {
                continue;
            }
            for (r, &row) in t_last.as_slice().iter().enumerate() {
                let numeric = (sp.s(1).get(row, m) - sm.s(1).get(row, m)) / (2.0 * h);
                let a = analytic.get(r, j);
                assert!((a - numeric).abs() / (1.0 + numeric.abs()) <= 1e-6, "{a} vs {numeric}");
            }
        }
    }

    #[test]
    fn efficient_matches_path_sum() {
        for seed in 0..4 {
            let stack = random_stack(seed + 40, &[6, 4, 2]);
            let fast = grad_a(&stack, &HalfSqLast).unwrap();
            let slow = grad_a_by_paths(&stack, &HalfSqLast).unwrap();
            for l in 0..3 {
                let diff = fast.da[l].sub(&slow.da[l]).unwrap().max_abs();
                assert!(diff <= 1e-10 * (1.0 + slow.da[l].max_abs()), "layer {l}: {diff}");
            }
        }
    }

    #[test]
    fn s_independent_loss_gives_direct_term_only() {
        let stack = random_stack(3, &[5, 3]);
        let g = grad_a(&stack, &HalfSqFirstA).unwrap();
        assert_eq!(g.da[0], *stack.a(0));
        assert_eq!(g.da[1], DenseMatrix::zeros(5, 3));
    }

    fn numeric_grad(stack: &FactorStack, loss: &dyn Loss, h: f64) -> Vec<Vec<Option<f64>>> {
        let a = stack.a_list();
        let mut out = Vec::new();
        for l in 0..a.len() {
            let mut layer = Vec::new();
            for idx in 0..a[l].as_slice().len() {
                let mut ap = a.to_vec();
                let mut am = a.to_vec();
                ap[l].as_mut_slice()[idx] += h;
                am[l].as_mut_slice()[idx] -= h;
                let sp = forward(ap, stack.x()).unwrap();
                let sm = forward(am, stack.x()).unwrap();
                if !sp.same_supports(&sm) || !sp.same_supports(stack) {
                    layer.push(None);
                    continue;
                }
                let vp = loss.evaluate(&sp).unwrap().value;
                let vm = loss.evaluate(&sm).unwrap().value;
                layer.push(Some((vp - vm) / (2.0 * h)));
            }
            out.push(layer);
        }
        out
    }

    #[test]
    fn identity_stack_half_square_loss() {
        let x = DenseMatrix::from_fn(3, 4, |i, j| 1.0 + ((i * 4 + j) % 5) as f64);
        let stack = forward(vec![DenseMatrix::identity(3), DenseMatrix::identity(3)], &x).unwrap();
        let g = grad_a(&stack, &HalfSqLast).unwrap();
        // With all A = I and zero residual, each layer reduces to -S Sᵀ.
        let sst = x.matmul(&x.transpose()).unwrap().scale(-1.0);
        for l in 0..2 {
            assert!(g.da[l].sub(&sst).unwrap().max_abs() < 1e-9);
        }
        let num = numeric_grad(&stack, &HalfSqLast, 1e-6);
        for l in 0..2 {
            for (idx, n) in num[l].iter().enumerate() {
                if let Some(n) = n {
                    let a = g.da[l].as_slice()[idx];
                    assert!((a - n).abs() <= 1e-5 * (1.0 + n.abs()));
                }
            }
        }
    }

    #[test]
    fn random_stack_matches_finite_differences() {
        let stack = random_stack(9, &[5, 3]);
        let g = grad_a(&stack, &HalfSqLast).unwrap();
        let num = numeric_grad(&stack, &HalfSqLast, 1e-6);
        let mut compared = 0;
        for l in 0..2 {
            for (idx, n) in num[l].iter().enumerate() {
                if let Some(n) = n {
                    compared += 1;
                    let a = g.da[l].as_slice()[idx];
                    assert!((a - n).abs() <= 1e-5 * (1.0 + n.abs()), "layer {l} entry {idx}: {a} vs {n}");
                }
            }
        }
        assert!(compared > 60);
    }

    #[test]
    fn summation_is_independent_of_thread_count() {
        let stack = random_stack(17, &[6, 4, 2]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let g1 = one.install(|| grad_a(&stack, &HalfSqLast).unwrap());
        let g4 = four.install(|| grad_a(&stack, &HalfSqLast).unwrap());
        assert_eq!(g1, g4);
    }
}
