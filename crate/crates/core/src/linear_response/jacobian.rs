use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Tolerance on `|Σ a − 1|` for a row to count as stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-10;

pub(crate) fn check_stochastic_row(a0: &[f64]) -> Result<()> {
    if a0.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Input("attention row must be finite and nonnegative".into()));
    }
    let s: f64 = a0.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Input(format!("attention row sums to {s}, not 1")));
    }
    Ok(())
}

pub(crate) fn check_stochastic(a0: &Matrix) -> Result<()> {
    if !a0.is_square() {
        return Err(Error::Dimension(format!("attention matrix must be square, got {:?}", a0.shape())));
    }
    for (i, row) in a0.iter_rows().enumerate() {
        check_stochastic_row(row).map_err(|e| Error::Input(format!("row {i}: {e}")))?;
    }
    Ok(())
}

/// First-order change of a softmax row, `δa_j = a_j (δs_j − Σ_k a_k δs_k)`.
pub fn softmax_jacobian_apply(a0_row: &[f64], ds_row: &[f64]) -> Result<Vec<f64>> {
    if a0_row.len() != ds_row.len() {
        return Err(Error::Dimension(format!("row lengths {} and {}", a0_row.len(), ds_row.len())));
    }
    check_stochastic_row(a0_row)?;
    if ds_row.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("logit perturbation must be finite".into()));
    }
    Ok(jacobian_row_unchecked(a0_row, ds_row))
}

fn jacobian_row_unchecked(a: &[f64], ds: &[f64]) -> Vec<f64> {
    let mean: f64 = a.iter().zip(ds).map(|(a, d)| a * d).sum();
    a.iter().zip(ds).map(|(a, d)| a * (d - mean)).collect()
}

/// Row-wise softmax Jacobian applied to a whole logit perturbation.
pub fn softmax_jacobian_rows(a0: &Matrix, ds: &Matrix) -> Result<Matrix> {
    if a0.shape() != ds.shape() {
        return Err(Error::Dimension(format!("shapes {:?} and {:?}", a0.shape(), ds.shape())));
    }
    check_stochastic(a0)?;
    let mut out = Matrix::zeros(a0.rows(), a0.cols());
    for i in 0..a0.rows() {
        out.row_mut(i).copy_from_slice(&jacobian_row_unchecked(a0.row(i), ds.row(i)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{gaussian_vec, rng_for};
    use crate::numerics::softmax_in_place;

    fn softmax(x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        softmax_in_place(&mut v).unwrap();
        v
    }

    #[test]
    fn trivial_cases() {
        let a = softmax(&[0.3, -1.0, 2.0, 0.0]);
        let da = softmax_jacobian_apply(&a, &[1.5; 4]).unwrap();
        assert!(da.iter().all(|x| x.abs() < 1e-15));
        let onehot = [0.0, 1.0, 0.0];
        assert_eq!(softmax_jacobian_apply(&onehot, &[3.0, -2.0, 7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = rng_for(11, &[]);
        for _ in 0..20 {
            let s = gaussian_vec(&mut rng, 9);
            let ds = gaussian_vec(&mut rng, 9);
            let a = softmax(&s);
            let da = softmax_jacobian_apply(&a, &ds).unwrap();
            let h = 1e-5;
            let plus = softmax(&s.iter().zip(&ds).map(|(x, d)| x + h * d).collect::<Vec<_>>());
            let minus = softmax(&s.iter().zip(&ds).map(|(x, d)| x - h * d).collect::<Vec<_>>());
            for j in 0..9 {
                assert!(((plus[j] - minus[j]) / (2.0 * h) - da[j]).abs() < 1e-6);
            }
            assert!(da.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(matches!(softmax_jacobian_apply(&[0.5, 0.6], &[0.0, 0.0]), Err(Error::Input(_))));
        assert!(matches!(softmax_jacobian_apply(&[1.5, -0.5], &[0.0, 0.0]), Err(Error::Input(_))));
        assert!(matches!(softmax_jacobian_apply(&[1.0], &[0.0, 0.0]), Err(Error::Dimension(_))));
    }
}
