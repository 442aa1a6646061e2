use super::Matrix;
use crate::error::{Error, Result};

/// Probability floor used inside `-log p`.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// `W x + b`.
pub fn linear_forward(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::dim(
            "linear_forward",
            format!("W {}x{}", w.rows(), w.cols()),
            format!("x {}", x.len()),
        ));
    }
    if b.len() != w.rows() {
        return Err(Error::dim(
            "linear_forward",
            format!("W {}x{}", w.rows(), w.cols()),
            format!("b {}", b.len()),
        ));
    }
    Ok((0..w.rows())
        .map(|r| super::dot(w.row(r), x) + b[r])
        .collect())
}

/// Shift-stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// `-log p[gold]` with the probability floored at [`LOG_PROB_FLOOR`].
pub fn cross_entropy(probabilities: &[f64], gold: usize) -> Result<f64> {
    let p = probabilities.get(gold).ok_or(Error::LabelOutOfRange {
        label: gold,
        classes: probabilities.len(),
        record: None,
    })?;
    // -ln(1) is -0.0; report it as plain zero.
    Ok(-(p.max(LOG_PROB_FLOOR).ln()) + 0.0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_bias() {
        let w = Matrix::identity(2);
        assert_eq!(linear_forward(&[1.0, 0.0], &w, &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let w = Matrix::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]).unwrap();
        assert_eq!(linear_forward(&[0.0, 0.0], &w, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn linear_hand_example() {
        // [[1,1],[2,0]] . [1,2] + [0,1] = [3, 3]
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(linear_forward(&[1.0, 2.0], &w, &[0.0, 1.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn linear_shape_error_names_shapes() {
        let w = Matrix::zeros(2, 3);
        let err = linear_forward(&[1.0, 2.0], &w, &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("x 2"), "{msg}");
        assert!(linear_forward(&[1.0, 2.0, 3.0], &w, &[0.0]).is_err());
    }

    #[test]
    fn softmax_basic() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-700.0, 0.0, 3.5, 800.0] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
