use crate::error::{Error, Result};
use crate::numerics::{dot, sym_eig, Matrix};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("Cholesky needs a square matrix, got {:?}", a.shape())));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::LinearAlgebra(format!("matrix not positive definite (pivot {j} = {d:.3e})")));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::Dimension(format!("rhs length {} for {n}x{n} system", b.len())));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let s = y[i] - dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        Ok(y)
    }

    /// Solves column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            out.set_col(j, &self.solve(&b.col(j))?);
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        let inv = self.solve_matrix(&Matrix::identity(self.dim()))?;
        // symmetrize away rounding
        Ok(Matrix::from_fn(inv.rows(), inv.cols(), |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)])))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }
}

/// Least squares `min ‖X b − y‖` by Householder QR. Requires full column rank.
pub fn lstsq(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} design rows but {} targets", y.len())));
    }
    if n < p {
        return Err(Error::Dimension(format!("underdetermined least squares ({n} rows, {p} columns)")));
    }
    let mut a = x.clone();
    let mut rhs = y.to_vec();
    let scale = x.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..p {
        let col_norm = (k..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if col_norm <= 1e-13 * scale * (n as f64).sqrt() {
            return Err(Error::LinearAlgebra(format!("design column {k} is rank deficient")));
        }
        let alpha = if a[(k, k)] > 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        for j in k..p {
            let s = (k..n).map(|i| v[i - k] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                a[(i, j)] -= s * v[i - k];
            }
        }
        let s = (k..n).map(|i| v[i - k] * rhs[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in k..n {
            rhs[i] -= s * v[i - k];
        }
    }
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..p {
            s -= a[(i, j)] * b[j];
        }
        b[i] = s / a[(i, i)];
    }
    Ok(b)
}

/// Ridge solution of `min ‖X W − Y‖² + λ‖W‖²`.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    /// p × q coefficient matrix.
    pub weights: Matrix,
    /// Condition number of `XᵀX + λI`.
    pub condition: f64,
}

const MAX_RIDGE_CONDITION: f64 = 1e12;

pub fn ridge_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<RidgeFit> {
    if x.rows() != y.rows() {
        return Err(Error::Dimension(format!("{} design rows but {} target rows", x.rows(), y.rows())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge penalty must be finite and nonnegative, got {lambda}")));
    }
    let xt = x.transpose();
    let mut gram = xt.matmul(x)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    let eig = sym_eig(&gram)?;
    let hi = eig.values.first().copied().unwrap_or(0.0);
    let lo = eig.values.last().copied().unwrap_or(0.0);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_RIDGE_CONDITION) {
        if hi == 0.0 && lambda > 0.0 {
            // all-zero design: the ridge solution is exactly zero
            return Ok(RidgeFit { weights: Matrix::zeros(x.cols(), y.cols()), condition: 1.0 });
        }
        return Err(Error::Regression { condition, ridge: lambda });
    }
    let rhs = xt.matmul(y)?;
    let weights = Cholesky::new(&gram)?.solve_matrix(&rhs)?;
    Ok(RidgeFit { weights, condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0, 0.6], vec![2.0, 5.0, 1.0], vec![0.6, 1.0, 3.0]]).unwrap();
        let ch = Cholesky::new(&a).unwrap();
        let x = ch.solve(&[1.0, -2.0, 0.5]).unwrap();
        let back = a.matvec(&x).unwrap();
        for (b, e) in back.iter().zip([1.0, -2.0, 0.5]) {
            assert!((b - e).abs() < 1e-13);
        }
        let inv = ch.inverse().unwrap();
        assert!(a.matmul(&inv).unwrap().sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::LinearAlgebra(_))));
    }

    #[test]
    fn lstsq_recovers_coefficients() {
        let x = Matrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 * 0.3 });
        let y: Vec<f64> = (0..20).map(|i| 2.0 - 0.5 * i as f64 * 0.3).collect();
        let b = lstsq(&x, &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_ridge_shrinkage() {
        // one feature equal to the target: w = Σx² / (Σx² + λ)
        let xs: Vec<f64> = (1..=10).map(|i| i as f64 / 3.0).collect();
        let x = Matrix::column(&xs);
        let sxx: f64 = xs.iter().map(|v| v * v).sum();
        for &lambda in &[0.0, 0.5, 10.0] {
            let fit = ridge_fit(&x, &x, lambda).unwrap();
            assert!((fit.weights[(0, 0)] - sxx / (sxx + lambda)).abs() < 1e-14);
        }
        let huge = ridge_fit(&x, &x, 1e12).unwrap();
        assert!(huge.weights[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn ridge_reports_ill_conditioning() {
        let x = Matrix::from_fn(10, 2, |i, _| i as f64);
        assert!(matches!(ridge_fit(&x, &Matrix::zeros(10, 1), 0.0), Err(Error::Regression { .. })));
    }
}
