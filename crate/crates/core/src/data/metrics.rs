//! Relative reconstruction error, argmax classification accuracy, and topic
//! keyword extraction.

use crate::engine::FactorStack;
use crate::error::{shape_err, Result};
use crate::matrix::{DenseMatrix, DEFAULT_RANK_TOL};
use crate::nmf::a_chain;

/// `‖X − A(0)···A(L) S(L)‖ / ‖X‖` for the stack's final layer.
pub fn recon_error(x: &DenseMatrix, stack: &FactorStack) -> Result<f64> {
    recon_error_parts(x, stack.a_list(), stack.s_last())
}

/// Same quantity from explicit factors. A zero `X` gives 0 when the product
/// is also zero and infinity otherwise.
pub fn recon_error_parts(x: &DenseMatrix, a: &[DenseMatrix], s_last: &DenseMatrix) -> Result<f64> {
    if a.is_empty() {
        return Err(shape_err("recon_error factors", "at least one", 0));
    }
    let approx = a_chain(a)?.matmul(s_last)?;
    let resid = x.sub(&approx)?.frobenius();
    let norm = x.frobenius();
    if norm == 0.0 {
        return Ok(if resid == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(resid / norm)
}

/// Column-wise argmax of `B S`, lowest index on ties.
pub fn predict(b: &DenseMatrix, s_last: &DenseMatrix) -> Result<Vec<usize>> {
    let scores = b.matmul(s_last)?;
    Ok((0..scores.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..scores.rows() {
                if scores.get(i, j) > scores.get(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Fraction of masked columns whose predicted class equals `labels`. An empty
/// mask scores 0.
pub fn class_accuracy(b: &DenseMatrix, s_last: &DenseMatrix, labels: &[usize], eval_mask: &[bool]) -> Result<f64> {
    if labels.len() != s_last.cols() {
        return Err(shape_err("class_accuracy labels", s_last.cols(), labels.len()));
    }
    if eval_mask.len() != s_last.cols() {
        return Err(shape_err("class_accuracy mask", s_last.cols(), eval_mask.len()));
    }
    let pred = predict(b, s_last)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for ((p, l), &m) in pred.iter().zip(labels).zip(eval_mask) {
        if m {
            total += 1;
            hit += (p == l) as usize;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// `Y · pinv(S)`: the least-squares map from topics to classes when every
/// label is used. Gives unsupervised models a classifier to score. Singular
/// values of `S` below the default rank tolerance are dropped, so the
/// minimum-norm map is returned when `S` is rank deficient.
pub fn fit_classifier(y: &DenseMatrix, s_last: &DenseMatrix) -> Result<DenseMatrix> {
    if y.cols() != s_last.cols() {
        return Err(shape_err("fit_classifier columns", s_last.cols(), y.cols()));
    }
    y.matmul(&s_last.pinv_truncated(DEFAULT_RANK_TOL))
}

/// For each column of `a_product`, the `n` rows of largest magnitude with
/// their values, largest first; ties keep the lower row first.
pub fn top_keywords(a_product: &DenseMatrix, vocabulary: &[String], n: usize) -> Result<Vec<Vec<(String, f64)>>> {
    if vocabulary.len() != a_product.rows() {
        return Err(shape_err("top_keywords vocabulary", a_product.rows(), vocabulary.len()));
    }
    Ok((0..a_product.cols())
        .map(|j| {
            let col = a_product.col(j);
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&p, &q| col[q].abs().total_cmp(&col[p].abs()).then(p.cmp(&q)));
            order
                .into_iter()
                .take(n)
                .map(|i| (vocabulary[i].clone(), col[i]))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::one_hot;
    use crate::engine::forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_and_zero_factorizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = DenseMatrix::from_fn(6, 2, |_, _| rng.gen::<f64>());
        let s = DenseMatrix::from_fn(2, 5, |_, _| rng.gen::<f64>());
        let x = a.matmul(&s).unwrap();
        assert!(recon_error_parts(&x, std::slice::from_ref(&a), &s).unwrap() < 1e-15);
        let zero = recon_error_parts(&x, &[DenseMatrix::zeros(6, 2)], &DenseMatrix::zeros(2, 5)).unwrap();
        assert_eq!(zero, 1.0);
        let stack = forward(vec![a], &x).unwrap();
        assert!(recon_error(&x, &stack).unwrap() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [2usize, 0, 1, 1, 2];
        let y = one_hot(&labels, 3).unwrap();
        let acc = class_accuracy(&DenseMatrix::identity(3), &y, &labels, &[true; 5]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn all_ties_predict_class_zero() {
        let labels = [0usize, 1, 0, 2, 0, 1];
        let s = DenseMatrix::filled(2, 6, 1.0);
        let acc = class_accuracy(&DenseMatrix::zeros(3, 2), &s, &labels, &[true; 6]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn mask_selects_columns() {
        let labels = [0usize, 1, 1];
        let y = one_hot(&[0, 1, 0], 2).unwrap();
        let eye = DenseMatrix::identity(2);
        assert_eq!(class_accuracy(&eye, &y, &labels, &[true, true, false]).unwrap(), 1.0);
        assert_eq!(class_accuracy(&eye, &y, &labels, &[false, false, true]).unwrap(), 0.0);
        assert_eq!(class_accuracy(&eye, &y, &labels, &[false; 3]).unwrap(), 0.0);
        assert!(class_accuracy(&eye, &y, &labels, &[true; 2]).is_err());
    }

    #[test]
    fn random_predictions_hit_chance_level() {
        let mut total = 0.0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..90).map(|j| j % 9).collect();
            let scores = DenseMatrix::from_fn(9, 90, |_, _| rng.gen::<f64>());
            total += class_accuracy(&DenseMatrix::identity(9), &scores, &labels, &[true; 90]).unwrap();
        }
        let mean = total / 1000.0;
        assert!((mean - 1.0 / 9.0).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn fitted_classifier_separates_indicator_topics() {
        let labels = [0usize, 0, 1, 2, 2, 1];
        let y = one_hot(&labels, 3).unwrap();
        let s = y.scale(0.5);
        let b = fit_classifier(&y, &s).unwrap();
        assert_eq!(predict(&b, &s).unwrap(), labels.to_vec());
    }

    #[test]
    fn fitted_classifier_tolerates_repeated_topics() {
        // Two identical topic rows: S has rank 1, yet Y S† is still the
        // least-squares map and recovers the two-class split.
        let labels = [0usize, 1, 1, 0];
        let y = one_hot(&labels, 2).unwrap();
        let s = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]]).unwrap();
        let b = fit_classifier(&y, &s).unwrap();
        assert_eq!(predict(&b, &s).unwrap(), labels.to_vec());
        assert!(fit_classifier(&y, &DenseMatrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn keywords_by_magnitude() {
        let a = DenseMatrix::from_rows(&[vec![0.1, 3.0], vec![0.5, 0.0], vec![0.5, 1.0]]).unwrap();
        let vocab: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let kw = top_keywords(&a, &vocab, 2).unwrap();
        assert_eq!(kw[0], vec![("y".to_string(), 0.5), ("z".to_string(), 0.5)]);
        assert_eq!(kw[1][0].0, "x");
    }
}
