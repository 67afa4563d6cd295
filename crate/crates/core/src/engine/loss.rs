//! Differentiable losses on a factor stack, with the partial derivatives
//! consumed by backpropagation.

use super::FactorStack;
use crate::error::{shape_err, Error, Result};
use crate::matrix::{DenseMatrix, DEFAULT_RANK_TOL};
use crate::nmf::{a_chain, SupervisionData};

/// Value of a loss and its partials at one stack.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// `∂L/∂S(ℓ)` holding every other S and every A fixed.
    pub ds: Vec<DenseMatrix>,
    /// `∂L/∂A(ℓ)` holding every S fixed.
    pub da: Vec<DenseMatrix>,
}

pub trait Loss: Send + Sync {
    fn evaluate(&self, stack: &FactorStack) -> Result<LossEval>;

    /// A copy of this loss with any quantity derived from the stack (but not
    /// differentiated through) pinned to its value at `stack`. Finite
    /// differences against such a copy match the analytic gradient. `None`
    /// means the loss has no such quantities.
    fn frozen_at(&self, _stack: &FactorStack) -> Result<Option<Box<dyn Loss>>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `‖X − A(0)···A(L) S(L)‖²`.
    ReconstructionFinal,
    /// `Σ_ℓ ‖S(ℓ−1) − A(ℓ) S(ℓ)‖²` with `S(−1) = X`.
    ReconstructionAllLayers,
    /// Reconstruction-final plus `λ ‖Z ⊙ (Y − B S(L))‖²`.
    ReconstructionClassification,
}

#[derive(Debug, Clone)]
pub struct LossSpec {
    kind: LossKind,
    lambda: f64,
    supervision: Option<SupervisionData>,
    clamp_b: bool,
    truncate_b: bool,
    frozen_b: Option<DenseMatrix>,
}

impl LossSpec {
    pub fn new(kind: LossKind, lambda: f64, supervision: Option<SupervisionData>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidLoss(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        let needs = kind == LossKind::ReconstructionClassification;
        if needs != supervision.is_some() {
            return Err(Error::InvalidLoss(if needs {
                "classification loss requires supervision".into()
            } else {
                "supervision given for an unsupervised loss".into()
            }));
        }
        Ok(Self {
            kind,
            lambda,
            supervision,
            clamp_b: false,
            truncate_b: false,
            frozen_b: None,
        })
    }

    pub fn reconstruction_final() -> Self {
        Self::new(LossKind::ReconstructionFinal, 0.0, None).expect("valid")
    }

    pub fn reconstruction_all_layers() -> Self {
        Self::new(LossKind::ReconstructionAllLayers, 0.0, None).expect("valid")
    }

    pub fn classification(supervision: SupervisionData, lambda: f64) -> Result<Self> {
        Self::new(LossKind::ReconstructionClassification, lambda, Some(supervision))
    }

    /// Use `relu(B)` instead of `B`.
    pub fn with_clamped_b(mut self, clamp: bool) -> Self {
        self.clamp_b = clamp;
        self
    }

    /// Compute B with a truncated pseudoinverse, so a final S that lost
    /// row rank yields a classifier instead of an error.
    pub fn with_truncated_b(mut self, truncate: bool) -> Self {
        self.truncate_b = truncate;
        self
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn supervision(&self) -> Option<&SupervisionData> {
        self.supervision.as_ref()
    }

    /// The classification matrix used at `s_last`, if this loss has one.
    pub fn classifier(&self, s_last: &DenseMatrix) -> Result<Option<DenseMatrix>> {
        let Some(sup) = &self.supervision else {
            return Ok(None);
        };
        if let Some(b) = &self.frozen_b {
            return Ok(Some(b.clone()));
        }
        let b = if self.truncate_b {
            if sup.columns() != s_last.cols() {
                return Err(shape_err("compute_b columns", s_last.cols(), sup.columns()));
            }
            sup.masked_labels().matmul(&s_last.pinv_truncated(DEFAULT_RANK_TOL))?
        } else {
            compute_b(sup, s_last)?
        };
        Ok(Some(if self.clamp_b { b.relu() } else { b }))
    }

    /// Loss value and partials from explicit factors, without requiring the
    /// S-matrices to be NNLS solutions.
    pub fn evaluate_parts(&self, x: &DenseMatrix, a: &[DenseMatrix], s: &[DenseMatrix]) -> Result<LossEval> {
        if a.is_empty() || a.len() != s.len() {
            return Err(shape_err("loss factors", a.len(), s.len()));
        }
        match self.kind {
            LossKind::ReconstructionFinal => reconstruction_final(x, a, s),
            LossKind::ReconstructionAllLayers => reconstruction_all_layers(x, a, s),
            LossKind::ReconstructionClassification => {
                let mut eval = reconstruction_final(x, a, s)?;
                let sup = self.supervision.as_ref().expect("validated");
                sup.validate(x.rows(), x.cols())?;
                let s_last = s.last().expect("nonempty");
                let b = self.classifier(s_last)?.expect("supervised");
                // Z ⊙ (B S − Y); the gradient of ‖Z ⊙ (Y − BS)‖² in S is 2 Bᵀ (Z ⊙ Z ⊙ (BS − Y)).
                let masked = sup.z.hadamard(&b.matmul(s_last)?.sub(&sup.y)?)?;
                eval.value += self.lambda * masked.frobenius_sq();
                let grad = b.transpose().matmul(&sup.z.hadamard(&masked)?)?;
                let last = eval.ds.len() - 1;
                eval.ds[last].axpy(2.0 * self.lambda, &grad)?;
                Ok(eval)
            }
        }
    }
}

impl Loss for LossSpec {
    fn evaluate(&self, stack: &FactorStack) -> Result<LossEval> {
        self.evaluate_parts(stack.x(), stack.a_list(), stack.s_list())
    }

    fn frozen_at(&self, stack: &FactorStack) -> Result<Option<Box<dyn Loss>>> {
        if self.supervision.is_none() || self.frozen_b.is_some() {
            return Ok(None);
        }
        let mut frozen = self.clone();
        frozen.frozen_b = self.classifier(stack.s_last())?;
        Ok(Some(Box::new(frozen)))
    }
}

/// `B = (Z ⊙ Y) · pinv(S(L))`.
pub fn compute_b(supervision: &SupervisionData, s_last: &DenseMatrix) -> Result<DenseMatrix> {
    if supervision.columns() != s_last.cols() {
        return Err(shape_err("compute_b columns", s_last.cols(), supervision.columns()));
    }
    supervision.masked_labels().matmul(&s_last.pinv()?)
}

/// `relu(compute_b(...))`.
pub fn compute_b_clamped(supervision: &SupervisionData, s_last: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(compute_b(supervision, s_last)?.relu())
}

fn zeros_like(m: &[DenseMatrix]) -> Vec<DenseMatrix> {
    m.iter().map(|f| DenseMatrix::zeros(f.rows(), f.cols())).collect()
}

fn reconstruction_final(x: &DenseMatrix, a: &[DenseMatrix], s: &[DenseMatrix]) -> Result<LossEval> {
    let depth = a.len();
    let s_last = &s[depth - 1];
    let product = a_chain(a)?;
    let err = product.matmul(s_last)?.sub(x)?;
    if err.shape() != x.shape() {
        return Err(shape_err("reconstruction", format!("{:?}", x.shape()), format!("{:?}", err.shape())));
    }
    let g = err.scale(2.0);

    let mut ds = zeros_like(s);
    ds[depth - 1] = product.transpose().matmul(&g)?;

    // right[ℓ] = A(ℓ+1) ··· A(L) S(L).
    let mut right = vec![s_last.clone(); depth];
    for l in (0..depth - 1).rev() {
        right[l] = a[l + 1].matmul(&right[l + 1])?;
    }
    let mut da = Vec::with_capacity(depth);
    // left_t = (A(0) ··· A(ℓ−1))ᵀ G, built incrementally.
    let mut left_t = g;
    for l in 0..depth {
        da.push(left_t.matmul(&right[l].transpose())?);
        left_t = a[l].transpose().matmul(&left_t)?;
    }
    Ok(LossEval {
        value: err.frobenius_sq(),
        ds,
        da,
    })
}

fn reconstruction_all_layers(x: &DenseMatrix, a: &[DenseMatrix], s: &[DenseMatrix]) -> Result<LossEval> {
    let depth = a.len();
    let mut ds = zeros_like(s);
    let mut da = Vec::with_capacity(depth);
    let mut value = 0.0;
    for l in 0..depth {
        let input = if l == 0 { x } else { &s[l - 1] };
        let err = a[l].matmul(&s[l])?.sub(input)?;
        value += err.frobenius_sq();
        ds[l].axpy(2.0, &a[l].transpose().matmul(&err)?)?;
        if l > 0 {
            ds[l - 1].axpy(-2.0, &err)?;
        }
        da.push(err.matmul(&s[l].transpose())?.scale(2.0));
    }
    Ok(LossEval { value, ds, da })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn one_hot(labels: &[usize], classes: usize) -> DenseMatrix {
        DenseMatrix::from_fn(classes, labels.len(), |i, j| (labels[j] == i) as u8 as f64)
    }

    fn supervision(y: DenseMatrix, known: &[bool]) -> SupervisionData {
        let z = DenseMatrix::from_fn(y.rows(), y.cols(), |_, j| known[j] as u8 as f64);
        SupervisionData { y, z, w: None, lambda: 1.0 }
    }

    /// Random factors with nonzero residual at every layer and labels on
    /// half the columns.
    fn instance(seed: u64) -> (DenseMatrix, Vec<DenseMatrix>, Vec<DenseMatrix>, SupervisionData) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(7, 6, &mut rng);
        let a = vec![random(7, 4, &mut rng), random(4, 3, &mut rng)];
        let s = vec![random(4, 6, &mut rng), random(3, 6, &mut rng)];
        let labels: Vec<usize> = (0..6).map(|j| j % 2).collect();
        let known: Vec<bool> = (0..6).map(|j| j < 3).collect();
        (x, a, s, supervision(one_hot(&labels, 2), &known))
    }

    fn central_diff(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        (f(h) - f(-h)) / (2.0 * h)
    }

    fn check_partials(spec: &LossSpec, x: &DenseMatrix, a: &[DenseMatrix], s: &[DenseMatrix]) {
        let eval = spec.evaluate_parts(x, a, s).unwrap();
        let h = 1e-6;
        for l in 0..a.len() {
            for idx in 0..a[l].as_slice().len() {
                let n = central_diff(
                    |d| {
                        let mut ap = a.to_vec();
                        ap[l].as_mut_slice()[idx] += d;
                        spec.evaluate_parts(x, &ap, s).unwrap().value
                    },
                    h,
                );
                let got = eval.da[l].as_slice()[idx];
                assert!((got - n).abs() <= 1e-6 * (1.0 + n.abs()), "dA layer {l}: {got} vs {n}");
            }
            for idx in 0..s[l].as_slice().len() {
                let n = central_diff(
                    |d| {
                        let mut sp = s.to_vec();
                        sp[l].as_mut_slice()[idx] += d;
                        spec.evaluate_parts(x, a, &sp).unwrap().value
                    },
                    h,
                );
                let got = eval.ds[l].as_slice()[idx];
                assert!((got - n).abs() <= 1e-6 * (1.0 + n.abs()), "dS layer {l}: {got} vs {n}");
            }
        }
    }

    #[test]
    fn perfect_factorization_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = vec![random(6, 3, &mut rng)];
        let s = vec![random(3, 5, &mut rng)];
        let x = a[0].matmul(&s[0]).unwrap();
        let eval = LossSpec::reconstruction_final().evaluate_parts(&x, &a, &s).unwrap();
        assert!(eval.value < 1e-24);
        assert!(eval.ds[0].max_abs() < 1e-12);
    }

    #[test]
    fn one_layer_quadratic_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(5, 4, &mut rng);
        let a = vec![random(5, 2, &mut rng)];
        let s = vec![random(2, 4, &mut rng)];
        let eval = LossSpec::reconstruction_final().evaluate_parts(&x, &a, &s).unwrap();
        let e = a[0].matmul(&s[0]).unwrap().sub(&x).unwrap();
        assert!((eval.value - e.frobenius_sq()).abs() < 1e-12);
        let ds = a[0].transpose().matmul(&e).unwrap().scale(2.0);
        let da = e.matmul(&s[0].transpose()).unwrap().scale(2.0);
        assert!(eval.ds[0].sub(&ds).unwrap().max_abs() < 1e-12);
        assert!(eval.da[0].sub(&da).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn partials_match_finite_differences_for_every_kind() {
        for seed in 0..3 {
            let (x, a, s, sup) = instance(seed);
            check_partials(&LossSpec::reconstruction_final(), &x, &a, &s);
            check_partials(&LossSpec::reconstruction_all_layers(), &x, &a, &s);
            // B is treated as a constant, so probe a frozen copy.
            let base = LossSpec::classification(sup, 0.7).unwrap();
            let mut frozen = base.clone();
            frozen.frozen_b = base.classifier(s.last().unwrap()).unwrap();
            check_partials(&frozen, &x, &a, &s);
        }
    }

    #[test]
    fn consistent_labels_give_zero_classification_loss() {
        // Columns 0..2 belong to part 0, columns 2..5 to part 1.
        let labels = [0usize, 0, 1, 1, 1];
        let s = vec![one_hot(&labels, 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = vec![random(6, 2, &mut rng)];
        let x = a[0].matmul(&s[0]).unwrap();
        let sup = supervision(one_hot(&labels, 2), &[true; 5]);
        let eval = LossSpec::classification(sup, 50.0)
            .unwrap()
            .evaluate_parts(&x, &a, &s)
            .unwrap();
        assert!(eval.value < 1e-20, "{}", eval.value);
    }

    #[test]
    fn compute_b_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random(3, 6, &mut rng);
        let labels = [0, 1, 2, 0, 1, 2];
        let none = supervision(one_hot(&labels, 3), &[false; 6]);
        assert_eq!(compute_b(&none, &s).unwrap().max_abs(), 0.0);

        let eye = DenseMatrix::identity(3);
        let sq = supervision(one_hot(&[0, 2, 1], 3), &[true, false, true]);
        let b = compute_b(&sq, &eye).unwrap();
        assert!(b.sub(&sq.masked_labels()).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn compute_b_recovers_block_to_class_map() {
        // Three blocks of columns, normalized indicators; blocks map to classes 1, 0, 1.
        let blocks = [0usize, 0, 1, 1, 1, 2, 2];
        let sizes = [2.0_f64, 3.0, 2.0];
        let s = DenseMatrix::from_fn(3, 7, |i, j| if blocks[j] == i { 1.0 / sizes[i].sqrt() } else { 0.0 });
        let class_of = [1usize, 0, 1];
        let labels: Vec<usize> = blocks.iter().map(|&b| class_of[b]).collect();
        let sup = supervision(one_hot(&labels, 2), &[true; 7]);
        let b = compute_b(&sup, &s).unwrap();
        let fit = b.matmul(&s).unwrap();
        assert!(fit.sub(&sup.masked_labels()).unwrap().max_abs() < 1e-10);
        for (block, &c) in class_of.iter().enumerate() {
            assert!((b.get(c, block) - sizes[block].sqrt()).abs() < 1e-10);
            assert!(b.get(1 - c, block).abs() < 1e-10);
        }
    }

    #[test]
    fn compute_b_rejects_rank_deficient_s() {
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let sup = supervision(one_hot(&[0, 1, 0], 2), &[true; 3]);
        assert!(matches!(compute_b(&sup, &s), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn spec_validation() {
        let (_, _, _, sup) = instance(0);
        assert!(LossSpec::new(LossKind::ReconstructionFinal, 0.0, Some(sup.clone())).is_err());
        assert!(LossSpec::new(LossKind::ReconstructionClassification, 1.0, None).is_err());
        assert!(LossSpec::classification(sup.clone(), -1.0).is_err());
        assert!(LossSpec::classification(sup, f64::NAN).is_err());
    }

    #[test]
    fn clamped_b_is_nonnegative() {
        let (_, _, s, sup) = instance(5);
        let b = compute_b_clamped(&sup, &s[1]).unwrap();
        assert!(b.is_nonnegative());
        let raw = compute_b(&sup, &s[1]).unwrap();
        assert_eq!(b, raw.relu());
    }
}
