use super::EncoderError;
use crate::tensor::{gemm, matmul, Matrix, Op};

/// Scaled dot-product attention over the keys flagged valid in `mask`.
///
/// Invalid keys get exactly zero weight, so every output row is a convex
/// combination of value rows at valid positions.
pub fn attention(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    mask: &[bool],
) -> Result<Matrix, EncoderError> {
    attention_with_weights(queries, keys, values, mask).map(|(out, _)| out)
}

/// As [`attention`], also returning the `queries × keys` weight matrix.
pub fn attention_with_weights(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    mask: &[bool],
) -> Result<(Matrix, Matrix), EncoderError> {
    if queries.cols() != keys.cols() {
        return Err(EncoderError::ShapeMismatch(format!(
            "query width {} != key width {}",
            queries.cols(),
            keys.cols()
        )));
    }
    if keys.rows() != values.rows() || mask.len() != keys.rows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "{} keys, {} values, mask of length {}",
            keys.rows(),
            values.rows(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(EncoderError::NoValidPositions);
    }
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut weights = matmul(queries, Op::N, keys, Op::T);
    for i in 0..weights.rows() {
        masked_softmax_row(weights.row_mut(i), mask, scale);
    }
    let out = matmul(&weights, Op::N, values, Op::N);
    Ok((out, weights))
}

fn masked_softmax_row(row: &mut [f64], mask: &[bool], scale: f64) {
    let mut max = f64::NEG_INFINITY;
    for (s, &m) in row.iter_mut().zip(mask) {
        if m {
            *s *= scale;
            max = max.max(*s);
        }
    }
    let mut sum = 0.0;
    for (s, &m) in row.iter_mut().zip(mask) {
        if m {
            *s = (*s - max).exp();
            sum += *s;
        } else {
            *s = 0.0;
        }
    }
    for s in row.iter_mut() {
        *s /= sum;
    }
}

/// Gradients of one attention head given the upstream gradient of its output.
/// Returns `(d_queries, d_keys, d_values)`.
pub(super) fn attention_backward(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    weights: &Matrix,
    d_out: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut d_scores = matmul(d_out, Op::N, values, Op::T);
    for i in 0..d_scores.rows() {
        let p = weights.row(i);
        let row = d_scores.row_mut(i);
        let inner: f64 = p.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        for (d, pw) in row.iter_mut().zip(p) {
            *d = pw * (*d - inner) * scale;
        }
    }
    let d_values = matmul(weights, Op::T, d_out, Op::N);
    let d_queries = matmul(&d_scores, Op::N, keys, Op::N);
    let mut d_keys = Matrix::zeros(keys.rows(), keys.cols());
    gemm(1.0, &d_scores, Op::T, queries, Op::N, 0.0, &mut d_keys);
    (d_queries, d_keys, d_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight triple loop, no shared helpers.
    fn naive_attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool]) -> Matrix {
        let d = q.cols() as f64;
        let mut out = Matrix::zeros(q.rows(), v.cols());
        for i in 0..q.rows() {
            let mut scores = vec![f64::NEG_INFINITY; k.rows()];
            for j in 0..k.rows() {
                if mask[j] {
                    let mut s = 0.0;
                    for c in 0..q.cols() {
                        s += q.get(i, c) * k.get(j, c);
                    }
                    scores[j] = s / d.sqrt();
                }
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| if s.is_finite() { (s - m).exp() } else { 0.0 }).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k.rows() {
                for c in 0..v.cols() {
                    let cur = out.get(i, c);
                    out.set(i, c, cur + e[j] / z * v.get(j, c));
                }
            }
        }
        out
    }

    #[test]
    fn single_valid_key_copies_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Matrix::uniform(3, 4, 1.0, &mut rng);
        let k = Matrix::uniform(5, 4, 1.0, &mut rng);
        let v = Matrix::uniform(5, 2, 1.0, &mut rng);
        let mask = [false, false, true, false, false];
        let out = attention(&q, &k, &v, &mask).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(2));
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Matrix::uniform(2, 3, 1.0, &mut rng);
        let k = Matrix::from_rows(&vec![vec![0.3, -0.2, 0.9]; 4]);
        let v = Matrix::uniform(4, 3, 1.0, &mut rng);
        let mask = [true, false, true, true];
        let (_, w) = attention_with_weights(&q, &k, &v, &mask).unwrap();
        for i in 0..2 {
            for (j, &m) in mask.iter().enumerate() {
                let want = if m { 1.0 / 3.0 } else { 0.0 };
                assert!((w.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let q = Matrix::uniform(3, 6, 2.0, &mut rng);
            let k = Matrix::uniform(3, 6, 2.0, &mut rng);
            let v = Matrix::uniform(3, 6, 2.0, &mut rng);
            let mask = [true, trial % 2 == 0, true];
            let got = attention(&q, &k, &v, &mask).unwrap();
            let want = naive_attention(&q, &k, &v, &mask);
            for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn rows_are_stochastic_and_masked_columns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Matrix::uniform(6, 8, 3.0, &mut rng);
        let k = Matrix::uniform(6, 8, 3.0, &mut rng);
        let v = Matrix::uniform(6, 8, 3.0, &mut rng);
        let mask = [true, true, false, true, false, true];
        let (_, w) = attention_with_weights(&q, &k, &v, &mask).unwrap();
        for i in 0..6 {
            let s: f64 = w.row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
            assert_eq!(w.get(i, 2), 0.0);
            assert_eq!(w.get(i, 4), 0.0);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(
            attention(&a, &b, &b, &[true, true]),
            Err(EncoderError::ShapeMismatch(_))
        ));
        assert!(matches!(
            attention(&a, &a, &a, &[true]),
            Err(EncoderError::ShapeMismatch(_))
        ));
        assert!(matches!(
            attention(&a, &a, &a, &[false, false]),
            Err(EncoderError::NoValidPositions)
        ));
    }
}
