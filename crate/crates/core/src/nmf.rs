//! Multiplicative-update baselines: plain NMF, semisupervised NMF, and
//! sequential hierarchical NMF. HNMF also provides the warm start for the
//! neural model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::DenseMatrix;

/// Floor applied to every multiplicative-update denominator.
pub const DENOM_FLOOR: f64 = 1e-12;
pub const DEFAULT_MU_ITERS: usize = 1000;

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub a: DenseMatrix,
    pub s: DenseMatrix,
    pub b: Option<DenseMatrix>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
}

/// Label information for the semisupervised objective
/// `||W ⊙ (X - AS)||² + λ ||Z ⊙ (Y - BS)||²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionData {
    /// P x M label matrix.
    pub y: DenseMatrix,
    /// P x M label indicator; each column is all ones or all zeros.
    pub z: DenseMatrix,
    /// N x M data indicator. `None` means every entry of X is known.
    pub w: Option<DenseMatrix>,
    pub lambda: f64,
}

impl SupervisionData {
    pub fn classes(&self) -> usize {
        self.y.rows()
    }

    pub fn columns(&self) -> usize {
        self.y.cols()
    }

    pub fn validate(&self, data_rows: usize, data_cols: usize) -> Result<()> {
        if self.y.shape() != self.z.shape() {
            return Err(shape_err(
                "supervision Z",
                format!("{:?}", self.y.shape()),
                format!("{:?}", self.z.shape()),
            ));
        }
        if self.y.cols() != data_cols {
            return Err(shape_err("supervision Y columns", data_cols, self.y.cols()));
        }
        if let Some(w) = &self.w {
            if w.shape() != (data_rows, data_cols) {
                return Err(shape_err(
                    "supervision W",
                    format!("{:?}", (data_rows, data_cols)),
                    format!("{:?}", w.shape()),
                ));
            }
            if !is_binary(w) {
                return Err(Error::InvalidLoss("W must be a 0/1 matrix".into()));
            }
        }
        if !is_binary(&self.z) {
            return Err(Error::InvalidLoss("Z must be a 0/1 matrix".into()));
        }
        for j in 0..self.z.cols() {
            let c = self.z.col(j);
            if c.iter().any(|&v| v != c[0]) {
                return Err(Error::InvalidLoss(format!(
                    "Z column {j} must be all ones or all zeros"
                )));
            }
        }
        self.y.check_nonnegative()?;
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidLoss(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Indices of columns whose label is known.
    pub fn known_columns(&self) -> Vec<usize> {
        (0..self.z.cols())
            .filter(|&j| self.z.rows() > 0 && self.z.get(0, j) != 0.0)
            .collect()
    }

    /// `Z ⊙ Y`.
    pub fn masked_labels(&self) -> DenseMatrix {
        self.z.hadamard(&self.y).expect("validated shapes")
    }
}

fn is_binary(m: &DenseMatrix) -> bool {
    m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Rank sequence `k(0) > k(1) > ... > k(L)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    ranks: Vec<usize>,
}

impl LayerSpec {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidLayers("at least one layer is required".into()));
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidLayers("ranks must be positive".into()));
        }
        if ranks.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidLayers(format!(
                "ranks must be strictly decreasing, got {ranks:?}"
            )));
        }
        Ok(Self { ranks })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn depth(&self) -> usize {
        self.ranks.len()
    }

    pub fn validate_for(&self, data_rows: usize) -> Result<()> {
        if self.ranks[0] >= data_rows {
            return Err(Error::InvalidLayers(format!(
                "first rank {} must be below the data row count {data_rows}",
                self.ranks[0]
            )));
        }
        Ok(())
    }

    /// Shape of `A(ℓ)`: `k(ℓ-1) x k(ℓ)` with `k(-1) = data_rows`.
    pub fn a_shape(&self, layer: usize, data_rows: usize) -> (usize, usize) {
        let rows = if layer == 0 {
            data_rows
        } else {
            self.ranks[layer - 1]
        };
        (rows, self.ranks[layer])
    }
}

fn check_rank(x: &DenseMatrix, k: usize) -> Result<()> {
    if k == 0 || k >= x.rows().min(x.cols()) {
        return Err(Error::InvalidRank {
            rank: k,
            rows: x.rows(),
            cols: x.cols(),
        });
    }
    Ok(())
}

/// Uniform(0, 1) entries scaled by `sqrt(mean / k)`.
fn random_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, mean: f64, k: usize) -> DenseMatrix {
    let scale = (mean.max(0.0) / k as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| scale * rng.gen::<f64>())
}

/// `base ⊙ numer / max(denom, floor)`, in place.
fn mu_step(base: &mut DenseMatrix, numer: &DenseMatrix, denom: &DenseMatrix) {
    for ((b, &n), &d) in base
        .as_mut_slice()
        .iter_mut()
        .zip(numer.as_slice())
        .zip(denom.as_slice())
    {
        *b *= n / d.max(DENOM_FLOOR);
    }
}

/// Lee–Seung multiplicative updates for `min ||X - AS||²`.
pub fn nmf_mu(x: &DenseMatrix, k: usize, iters: usize, seed: u64) -> Result<NmfResult> {
    x.check_nonnegative()?;
    check_rank(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = x.mean();
    let mut a = random_factor(&mut rng, x.rows(), k, mean, k);
    let mut s = random_factor(&mut rng, k, x.cols(), mean, k);
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let at = a.transpose();
        let numer = at.matmul(x)?;
        let denom = at.matmul(&a)?.matmul(&s)?;
        mu_step(&mut s, &numer, &denom);

        let st = s.transpose();
        let numer = x.matmul(&st)?;
        let denom = a.matmul(&s.matmul(&st)?)?;
        mu_step(&mut a, &numer, &denom);

        trace.push(x.sub(&a.matmul(&s)?)?.frobenius_sq());
    }
    Ok(NmfResult {
        a,
        s,
        b: None,
        objective_trace: trace,
    })
}

/// Multiplicative updates for the semisupervised objective. Factors are drawn
/// in the order A, S, B, so with no supervision signal the trajectory of A and
/// S matches [`nmf_mu`] for the same seed.
pub fn ssnmf_mu(
    x: &DenseMatrix,
    sup: &SupervisionData,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<NmfResult> {
    x.check_nonnegative()?;
    check_rank(x, k)?;
    sup.validate(x.rows(), x.cols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = x.mean();
    let mut a = random_factor(&mut rng, x.rows(), k, mean, k);
    let mut s = random_factor(&mut rng, k, x.cols(), mean, k);
    let mut b = random_factor(&mut rng, sup.classes(), k, sup.y.mean(), k);

    let wx = match &sup.w {
        Some(w) => w.hadamard(x)?,
        None => x.clone(),
    };
    let zy = sup.masked_labels();
    let lambda = sup.lambda;
    let masked = |m: DenseMatrix, mask: Option<&DenseMatrix>| -> Result<DenseMatrix> {
        match mask {
            Some(w) => w.hadamard(&m),
            None => Ok(m),
        }
    };

    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let at = a.transpose();
        let bt = b.transpose();
        let w_as = masked(a.matmul(&s)?, sup.w.as_ref())?;
        let z_bs = sup.z.hadamard(&b.matmul(&s)?)?;
        let mut numer = at.matmul(&wx)?;
        numer.axpy(lambda, &bt.matmul(&zy)?)?;
        let mut denom = at.matmul(&w_as)?;
        denom.axpy(lambda, &bt.matmul(&z_bs)?)?;
        mu_step(&mut s, &numer, &denom);

        let st = s.transpose();
        let w_as = masked(a.matmul(&s)?, sup.w.as_ref())?;
        mu_step(&mut a, &wx.matmul(&st)?, &w_as.matmul(&st)?);

        let z_bs = sup.z.hadamard(&b.matmul(&s)?)?;
        mu_step(&mut b, &zy.matmul(&st)?, &z_bs.matmul(&st)?);

        trace.push(ssnmf_objective(x, sup, &a, &s, &b)?);
    }
    Ok(NmfResult {
        a,
        s,
        b: Some(b),
        objective_trace: trace,
    })
}

/// `||W ⊙ (X - AS)||² + λ ||Z ⊙ (Y - BS)||²`.
pub fn ssnmf_objective(
    x: &DenseMatrix,
    sup: &SupervisionData,
    a: &DenseMatrix,
    s: &DenseMatrix,
    b: &DenseMatrix,
) -> Result<f64> {
    let mut recon = x.sub(&a.matmul(s)?)?;
    if let Some(w) = &sup.w {
        recon = w.hadamard(&recon)?;
    }
    let class = sup.z.hadamard(&sup.y.sub(&b.matmul(s)?)?)?;
    Ok(recon.frobenius_sq() + sup.lambda * class.frobenius_sq())
}

/// Output of sequential hierarchical NMF.
#[derive(Debug, Clone)]
pub struct HnmfResult {
    /// `A(ℓ)` is `k(ℓ-1) x k(ℓ)` with `k(-1) = N`.
    pub a: Vec<DenseMatrix>,
    /// `S(ℓ)` is `k(ℓ) x M`.
    pub s: Vec<DenseMatrix>,
    /// Classification matrix from the supervised final layer, if any.
    pub b: Option<DenseMatrix>,
    pub objective_traces: Vec<Vec<f64>>,
}

impl HnmfResult {
    pub fn depth(&self) -> usize {
        self.a.len()
    }

    /// `A(0) A(1) ... A(ℓ)`.
    pub fn a_product(&self, layer: usize) -> Result<DenseMatrix> {
        a_chain(&self.a[..=layer])
    }
}

/// Product of a nonempty chain of factor matrices.
pub fn a_chain(a: &[DenseMatrix]) -> Result<DenseMatrix> {
    let mut p = a[0].clone();
    for f in &a[1..] {
        p = p.matmul(f)?;
    }
    Ok(p)
}

/// Sequential HNMF: layer 0 factors X, layer ℓ factors `S(ℓ-1)`. When
/// supervision is given it is applied at the last layer only. Layer ℓ is
/// seeded with `seed + ℓ`.
pub fn hnmf(
    x: &DenseMatrix,
    layers: &LayerSpec,
    iters: usize,
    seed: u64,
    supervision: Option<&SupervisionData>,
) -> Result<HnmfResult> {
    layers.validate_for(x.rows())?;
    let depth = layers.depth();
    let mut a = Vec::with_capacity(depth);
    let mut s: Vec<DenseMatrix> = Vec::with_capacity(depth);
    let mut traces = Vec::with_capacity(depth);
    let mut b = None;
    for (layer, &k) in layers.ranks().iter().enumerate() {
        let input = if layer == 0 { x } else { &s[layer - 1] };
        let layer_seed = seed.wrapping_add(layer as u64);
        let result = match supervision {
            Some(sup) if layer + 1 == depth => {
                let mut local = sup.clone();
                if layer > 0 {
                    local.w = None;
                }
                ssnmf_mu(input, &local, k, iters, layer_seed)?
            }
            _ => nmf_mu(input, k, iters, layer_seed)?,
        };
        a.push(result.a);
        s.push(result.s);
        traces.push(result.objective_trace);
        b = b.or(result.b);
    }
    Ok(HnmfResult {
        a,
        s,
        b,
        objective_traces: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_nonneg(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>())
    }

    fn no_supervision(p: usize, m: usize) -> SupervisionData {
        SupervisionData {
            y: DenseMatrix::zeros(p, m),
            z: DenseMatrix::zeros(p, m),
            w: None,
            lambda: 1.0,
        }
    }

    #[test]
    fn rank_one_outer_product_is_recovered() {
        let u: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 * 0.3).collect();
        let v: Vec<f64> = (0..6).map(|j| 0.5 + (j % 3) as f64).collect();
        let x = DenseMatrix::from_fn(8, 6, |i, j| u[i] * v[j]);
        let r = nmf_mu(&x, 1, 500, 1).unwrap();
        let rel = x.sub(&r.a.matmul(&r.s).unwrap()).unwrap().frobenius() / x.frobenius();
        assert!(rel <= 1e-3, "relative error {rel}");
    }

    #[test]
    fn zero_column_gets_zero_coefficients() {
        let mut x = random_nonneg(10, 8, 2);
        for i in 0..10 {
            x.set(i, 3, 0.0);
        }
        let r = nmf_mu(&x, 3, 300, 4).unwrap();
        assert!(r.s.col(3).iter().all(|&v| v < 1e-8));
    }

    #[test]
    fn invalid_rank() {
        let x = random_nonneg(5, 4, 0);
        assert!(matches!(nmf_mu(&x, 4, 10, 0), Err(Error::InvalidRank { .. })));
        assert!(matches!(nmf_mu(&x, 0, 10, 0), Err(Error::InvalidRank { .. })));
    }

    #[test]
    fn factors_stay_nonnegative() {
        let x = random_nonneg(12, 9, 3);
        let r = nmf_mu(&x, 4, 50, 3).unwrap();
        assert!(r.a.is_nonnegative() && r.s.is_nonnegative());
    }

    #[test]
    fn ssnmf_without_signal_matches_nmf() {
        let x = random_nonneg(12, 10, 5);
        let plain = nmf_mu(&x, 3, 80, 17).unwrap();
        let mut sup = no_supervision(2, 10);
        sup.y = random_nonneg(2, 10, 1);
        sup.lambda = 0.0;
        let semi = ssnmf_mu(&x, &sup, 3, 80, 17).unwrap();
        for (p, q) in plain.objective_trace.iter().zip(&semi.objective_trace) {
            assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0), "{p} vs {q}");
        }
        // Zero indicator: same trajectory and zero classification loss.
        let mut sup = no_supervision(2, 10);
        sup.y = random_nonneg(2, 10, 1);
        let masked = ssnmf_mu(&x, &sup, 3, 80, 17).unwrap();
        for (p, q) in plain.objective_trace.iter().zip(&masked.objective_trace) {
            assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0));
        }
    }

    #[test]
    fn ssnmf_shape_checks() {
        let x = random_nonneg(6, 5, 1);
        let mut sup = no_supervision(2, 4);
        assert!(ssnmf_mu(&x, &sup, 2, 5, 0).is_err());
        sup = no_supervision(2, 5);
        sup.w = Some(DenseMatrix::filled(6, 4, 1.0));
        assert!(ssnmf_mu(&x, &sup, 2, 5, 0).is_err());
    }

    #[test]
    fn layer_spec_validation() {
        assert!(LayerSpec::new(vec![]).is_err());
        assert!(LayerSpec::new(vec![4, 4]).is_err());
        assert!(LayerSpec::new(vec![3, 5]).is_err());
        let l = LayerSpec::new(vec![9, 4, 2]).unwrap();
        assert!(l.validate_for(9).is_err());
        assert_eq!(l.a_shape(0, 90), (90, 9));
        assert_eq!(l.a_shape(2, 90), (4, 2));
    }

    #[test]
    fn hnmf_shapes_and_single_layer_equivalence() {
        let x = random_nonneg(20, 15, 8);
        let layers = LayerSpec::new(vec![6, 3, 2]).unwrap();
        let h = hnmf(&x, &layers, 50, 3, None).unwrap();
        for l in 0..3 {
            assert_eq!(h.a[l].shape(), layers.a_shape(l, 20));
            assert_eq!(h.s[l].shape(), (layers.ranks()[l], 15));
        }
        let single = hnmf(&x, &LayerSpec::new(vec![6]).unwrap(), 50, 3, None).unwrap();
        let direct = nmf_mu(&x, 6, 50, 3).unwrap();
        assert_eq!(single.a[0], direct.a);
        assert_eq!(single.s[0], direct.s);
    }
}
