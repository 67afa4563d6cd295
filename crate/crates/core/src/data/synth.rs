//! 90 x 87 matrix with three nested levels of diagonal blocks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nmf::SupervisionData;

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Nested block layout. Mid blocks split coarse blocks and fine blocks split
/// mid blocks, in order along the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSpec {
    pub coarse_rows: Vec<usize>,
    pub coarse_cols: Vec<usize>,
    pub mid_rows: Vec<usize>,
    pub mid_cols: Vec<usize>,
    pub fine_rows: Vec<usize>,
    pub fine_cols: Vec<usize>,
    /// Mid blocks per coarse block.
    pub mid_per_coarse: Vec<usize>,
    /// Fine blocks per mid block.
    pub fine_per_mid: Vec<usize>,
    pub coarse_intensity: f64,
    pub mid_intensity: f64,
    pub fine_intensity: f64,
    /// Upper end of the uniform noise added to every entry.
    pub noise_high: f64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            coarse_rows: vec![45, 45],
            coarse_cols: vec![44, 43],
            mid_rows: vec![23, 22, 22, 23],
            mid_cols: vec![22, 22, 21, 22],
            fine_rows: vec![8, 8, 7, 11, 11, 12, 10, 11, 12],
            fine_cols: vec![8, 7, 7, 12, 10, 10, 11, 9, 13],
            mid_per_coarse: vec![2, 2],
            fine_per_mid: vec![3, 2, 2, 2],
            coarse_intensity: 1.0,
            mid_intensity: 1.0,
            fine_intensity: 2.0,
            noise_high: 1.0,
        }
    }
}

impl BlockSpec {
    pub fn rows(&self) -> usize {
        self.coarse_rows.iter().sum()
    }

    pub fn cols(&self) -> usize {
        self.coarse_cols.iter().sum()
    }

    pub fn fine_blocks(&self) -> usize {
        self.fine_cols.len()
    }

    /// Per-index block ids at each level, `(coarse, mid, fine)`, for the
    /// given fine-block sizes.
    fn memberships(&self, fine: &[usize]) -> Vec<(usize, usize, usize)> {
        let mid_parent = expand(&self.mid_per_coarse);
        let fine_parent = expand(&self.fine_per_mid);
        expand(fine)
            .into_iter()
            .map(|f| {
                let m = fine_parent[f];
                (mid_parent[m], m, f)
            })
            .collect()
    }

    pub fn row_blocks(&self) -> Vec<(usize, usize, usize)> {
        self.memberships(&self.fine_rows)
    }

    pub fn col_blocks(&self) -> Vec<(usize, usize, usize)> {
        self.memberships(&self.fine_cols)
    }

    fn check(&self) {
        let nest = |outer: &[usize], inner: &[usize], per: &[usize]| {
            let mut it = inner.iter();
            for (&o, &n) in outer.iter().zip(per) {
                let s: usize = it.by_ref().take(n).sum();
                assert_eq!(s, o, "block sizes must nest");
            }
        };
        nest(&self.coarse_rows, &self.mid_rows, &self.mid_per_coarse);
        nest(&self.coarse_cols, &self.mid_cols, &self.mid_per_coarse);
        nest(&self.mid_rows, &self.fine_rows, &self.fine_per_mid);
        nest(&self.mid_cols, &self.fine_cols, &self.fine_per_mid);
    }
}

fn expand(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub x: DenseMatrix,
    /// Fine-block index of each column.
    pub labels: Vec<usize>,
    pub block_spec: BlockSpec,
}

impl SyntheticDataset {
    pub fn classes(&self) -> usize {
        self.block_spec.fine_blocks()
    }
}

pub fn synth_hier(seed: u64) -> SyntheticDataset {
    synth_hier_with(seed, true)
}

/// Labels depend only on the layout; the noise draw never changes them.
pub fn synth_hier_with(seed: u64, noise: bool) -> SyntheticDataset {
    let spec = BlockSpec::default();
    spec.check();
    let rows = spec.row_blocks();
    let cols = spec.col_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let (rc, rm, rf) = rows[i];
        let (cc, cm, cf) = cols[j];
        let mut v = 0.0;
        if rc == cc {
            v += spec.coarse_intensity;
        }
        if rm == cm {
            v += spec.mid_intensity;
        }
        if rf == cf {
            v += spec.fine_intensity;
        }
        if noise {
            v += spec.noise_high * rng.gen::<f64>();
        }
        v
    });
    SyntheticDataset {
        x,
        labels: cols.iter().map(|c| c.2).collect(),
        block_spec: spec,
    }
}

/// `classes x labels.len()` indicator matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DenseMatrix> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            size: classes,
        });
    }
    Ok(DenseMatrix::from_fn(classes, labels.len(), |i, j| {
        if labels[j] == i {
            1.0
        } else {
            0.0
        }
    }))
}

/// One-hot labels with a seeded uniform sample of `floor(fraction * M)`
/// columns marked known. Every data entry is marked known.
pub fn make_labels(labels: &[usize], known_fraction: f64, seed: u64, classes: usize) -> Result<SupervisionData> {
    if !(0.0..=1.0).contains(&known_fraction) {
        return Err(Error::InvalidFraction(known_fraction));
    }
    let m = labels.len();
    let y = one_hot(labels, classes)?;
    // The small offset keeps products like 0.29 * 100 from flooring to 28.
    let known = ((known_fraction * m as f64) + 1e-9).floor().min(m as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; m];
    for j in sample(&mut rng, m, known) {
        mask[j] = true;
    }
    let z = DenseMatrix::from_fn(classes, m, |_, j| if mask[j] { 1.0 } else { 0.0 });
    Ok(SupervisionData {
        y,
        z,
        w: None,
        lambda: DEFAULT_LAMBDA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnls::nnls_matrix;

    #[test]
    fn default_layout_shape() {
        let d = synth_hier(0);
        assert_eq!(d.x.shape(), (90, 87));
        assert_eq!(d.labels.len(), 87);
        assert_eq!(d.classes(), 9);
        assert!(d.x.is_nonnegative());
        for c in 0..9 {
            assert!(d.labels.contains(&c));
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = synth_hier(7);
        let b = synth_hier(7);
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_ne!(synth_hier(8).x.as_slice(), a.x.as_slice());
    }

    #[test]
    fn labels_do_not_depend_on_noise() {
        assert_eq!(synth_hier(1).labels, synth_hier(2).labels);
        assert_eq!(synth_hier(1).labels, synth_hier_with(1, false).labels);
    }

    #[test]
    fn noise_free_has_nine_column_patterns() {
        let d = synth_hier_with(0, false);
        let mut patterns: Vec<Vec<u64>> = (0..87)
            .map(|j| d.x.col(j).iter().map(|v| v.to_bits()).collect())
            .collect();
        patterns.sort();
        patterns.dedup();
        assert_eq!(patterns.len(), 9);
        // Entries take only the four level sums.
        for &v in d.x.as_slice() {
            assert!([0.0, 1.0, 2.0, 4.0].contains(&v));
        }
    }

    #[test]
    fn noise_free_has_exact_rank_nine_factorization() {
        let d = synth_hier_with(0, false);
        // A: one representative column per fine block; S: column indicators.
        let reps: Vec<Vec<f64>> = (0..9)
            .map(|f| d.x.col(d.labels.iter().position(|&l| l == f).unwrap()))
            .collect();
        let a = DenseMatrix::from_columns(90, &reps).unwrap();
        let s = one_hot(&d.labels, 9).unwrap();
        let resid = d.x.sub(&a.matmul(&s).unwrap()).unwrap().frobenius() / d.x.frobenius();
        assert!(resid < 1e-10);
        let sol = nnls_matrix(&a, &d.x, 1e-12).unwrap();
        assert!(sol.coefficients.sub(&s).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn label_fractions() {
        let labels: Vec<usize> = (0..87).map(|j| j % 9).collect();
        let count = |f: f64| make_labels(&labels, f, 3, 9).unwrap().known_columns().len();
        assert_eq!(count(0.0), 0);
        assert_eq!(count(1.0), 87);
        assert_eq!(count(0.4), 34);
        let none = make_labels(&labels, 0.0, 3, 9).unwrap();
        assert_eq!(none.z.max_abs(), 0.0);
        let all = make_labels(&labels, 1.0, 3, 9).unwrap();
        assert!(all.z.as_slice().iter().all(|&v| v == 1.0));
        assert!(matches!(make_labels(&labels, 1.5, 0, 9), Err(Error::InvalidFraction(_))));
        assert!(matches!(make_labels(&labels, -0.1, 0, 9), Err(Error::InvalidFraction(_))));
        assert_eq!(make_labels(&labels, 0.4, 3, 9).unwrap(), make_labels(&labels, 0.4, 3, 9).unwrap());
    }
}
