use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Max-subtracted softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    if row.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("NaN logit in softmax".into()));
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("non-finite logit in softmax".into()));
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row() {
        let s = softmax_rows(&Matrix::zeros(1, 3)).unwrap();
        for &x in s.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_two_offset() {
        for &c in &[-700.0, -3.0, 0.0, 12.5, 800.0] {
            let s = softmax_rows(&Matrix::new(1, 2, vec![c, c + std::f64::consts::LN_2]).unwrap()).unwrap();
            assert!((s[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
            assert!((s[(0, 1)] - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturates() {
        let s = softmax_rows(&Matrix::new(1, 4, vec![50.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_is_an_error() {
        let m = Matrix::new(1, 2, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax_rows(&m), Err(Error::Numeric(_))));
    }
}
