use crate::error::{dim_err, Result};
use crate::pb::residual::ErrorMatrix;

/// Centered covariance of `v` with each error column:
/// `sum_p (v_p - mean v) (E[p][o] - mean E_o)`.
pub fn covariances(v: &[f64], e: &ErrorMatrix) -> Result<Vec<f64>> {
    if v.len() != e.patterns() {
        return dim_err(format!(
            "candidate output has {} patterns, error matrix has {}",
            v.len(),
            e.patterns()
        ));
    }
    let v_mean = if v.iter().all(|x| *x == v[0]) {
        v[0]
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut cov = vec![0.0; e.outputs()];
    for (p, vp) in v.iter().enumerate() {
        let dv = vp - v_mean;
        for (o, c) in cov.iter_mut().enumerate() {
            *c += dv * e.centered(p, o);
        }
    }
    Ok(cov)
}

/// Correlation score `S = sum_o | sum_p (v_p - mean v)(E[p][o] - mean E_o) |`.
pub fn correlation_score(v: &[f64], e: &ErrorMatrix) -> Result<f64> {
    Ok(covariances(v, e)?.iter().map(|c| c.abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn col(v: &[f64]) -> ErrorMatrix {
        ErrorMatrix::new(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn constant_output_scores_zero() {
        assert_eq!(
            correlation_score(&[0.7, 0.7, 0.7], &col(&[1.0, -2.0, 5.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn hand_examples() {
        assert_eq!(correlation_score(&[1.0, -1.0], &col(&[1.0, -1.0])).unwrap(), 2.0);
        assert_eq!(correlation_score(&[1.0, -1.0], &col(&[-1.0, 1.0])).unwrap(), 2.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(correlation_score(&[1.0], &col(&[1.0, -1.0])).is_err());
    }
}
