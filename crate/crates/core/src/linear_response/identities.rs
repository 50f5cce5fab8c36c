use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_response::jacobian::{check_stochastic, softmax_jacobian_rows};
use crate::numerics::rng::{gaussian_matrix, gaussian_vec, rng_for};
use crate::numerics::{dot, norm, Matrix};

pub const A0P0_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-14;
pub const PROJECTION_TOL: f64 = 1e-12;
/// Absolute slack in `lhs ≤ rhs`, for rounding in exactly-degenerate cases.
pub const BOUND_ROUNDING: f64 = 1e-12;

const POWER_ITERATIONS: usize = 50;
const POWER_TOL: f64 = 1e-10;

/// `P₀X`: every row replaced by the column means of `X`.
pub fn project_constant(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let means: Vec<f64> = (0..x.cols()).map(|j| x.col(j).iter().sum::<f64>() / n).collect();
    Matrix::from_fn(x.rows(), x.cols(), |_, j| means[j])
}

/// `P⊥X = X − P₀X`.
pub fn project_mean_free(x: &Matrix) -> Matrix {
    x.sub(&project_constant(x)).expect("same shape")
}

/// `N_eff⁽ⁱ⁾ = 1/Σ_j A²_{0,ij}` for every row.
pub fn effective_attention_width(a0: &Matrix) -> Result<Vec<f64>> {
    check_stochastic(a0)?;
    Ok(a0.iter_rows().map(|r| 1.0 / dot(r, r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityViolation {
    pub identity: String,
    pub trial: Option<usize>,
    pub row: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorReport {
    pub n: usize,
    pub trials: usize,
    /// `max |A₀P₀ − P₀|`.
    pub a0p0_max_err: f64,
    /// `max |Σ_j δA_ij|` over trials and rows.
    pub row_sum_max: f64,
    /// `max |δA − δA P⊥|`.
    pub perp_max_err: f64,
    /// `max |δA V₀ − δA P⊥V₀|`.
    pub pattern_max_err: f64,
    /// First identity that failed its tolerance, if any.
    pub violation: Option<IdentityViolation>,
}

impl ProjectorReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

fn worst_row(errs: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    errs.fold((0, 0.0), |(bi, be), (i, e)| if e > be { (i, e) } else { (bi, be) })
}

/// Checks `A₀P₀ = P₀`, `δA·1 = 0`, `δA = δA P⊥` and `δA V₀ = δA P⊥V₀` for
/// `trials` Gaussian logit perturbations and value fields.
pub fn check_projector_identities(a0: &Matrix, trials: usize, seed: u64) -> Result<ProjectorReport> {
    check_stochastic(a0)?;
    let n = a0.rows();
    let mut violation = None;
    let mut flag = |name: &str, trial: Option<usize>, row: usize, err: f64, tol: f64| {
        if err > tol && violation.is_none() {
            violation = Some(IdentityViolation { identity: name.to_string(), trial, row, error: err });
        }
    };

    let p0 = 1.0 / n as f64;
    let (row, a0p0_max_err) =
        worst_row(a0.iter_rows().enumerate().map(|(i, r)| (i, (r.iter().sum::<f64>() * p0 - p0).abs())));
    flag("A0 P0 = P0", None, row, a0p0_max_err, A0P0_TOL);

    let (mut row_sum_max, mut perp_max_err, mut pattern_max_err) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..trials {
        let mut rng = rng_for(seed, &[t as u64]);
        let ds = gaussian_matrix(&mut rng, n, n);
        let v0 = gaussian_matrix(&mut rng, n, n);
        let da = softmax_jacobian_rows(a0, &ds)?;

        let (r, e) = worst_row(da.iter_rows().enumerate().map(|(i, r)| (i, r.iter().sum::<f64>().abs())));
        flag("dA 1 = 0", Some(t), r, e, ROW_SUM_TOL);
        row_sum_max = row_sum_max.max(e);

        let da_perp = project_mean_free(&da.transpose()).transpose();
        let diff = da.sub(&da_perp)?;
        let (r, e) = worst_row((0..n).map(|i| (i, diff.row(i).iter().fold(0.0f64, |m, x| m.max(x.abs())))));
        flag("dA = dA Pperp", Some(t), r, e, PROJECTION_TOL);
        perp_max_err = perp_max_err.max(e);

        let lhs = da.matmul(&v0)?;
        let rhs = da.matmul(&project_mean_free(&v0))?;
        let diff = lhs.sub(&rhs)?;
        let (r, e) = worst_row((0..n).map(|i| (i, diff.row(i).iter().fold(0.0f64, |m, x| m.max(x.abs())))));
        flag("dA V0 = dA Pperp V0", Some(t), r, e, PROJECTION_TOL);
        pattern_max_err = pattern_max_err.max(e);
    }
    Ok(ProjectorReport { n, trials, a0p0_max_err, row_sum_max, perp_max_err, pattern_max_err, violation })
}

/// Operator norm of `A₀P⊥` by power iteration on `(A₀P⊥)ᵀ(A₀P⊥)`.
pub fn perp_operator_norm(a0: &Matrix) -> Result<f64> {
    let n = a0.rows();
    let center = |x: &mut Vec<f64>| {
        let m = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= m);
    };
    let mut x = gaussian_vec(&mut rng_for(0x9e27, &[n as u64]), n);
    center(&mut x);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let nx = norm(&x);
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = a0.matvec(&x)?;
        let next = norm(&y);
        let mut z = a0.matvec_transposed(&y)?;
        center(&mut z);
        let done = (next - lambda).abs() <= POWER_TOL * next.max(1.0);
        lambda = next;
        x = z;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// Both sides of the routing-dominance inequality plus the measured
/// quantities entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `‖δA V₀‖ / ‖A₀δV‖`.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `‖P⊥V₀‖ / ‖P₀V₀‖`.
    pub eps_v0: f64,
    /// `‖P⊥δV‖ / ‖P₀δV‖`.
    pub eps_dv: f64,
    pub lambda_perp: f64,
    pub n_eff_min: f64,
    pub ds_max: f64,
}

impl BoundCheck {
    /// `rhs / lhs` (infinite when the pattern term vanishes).
    pub fn slack(&self) -> f64 {
        if self.lhs == 0.0 {
            f64::INFINITY
        } else {
            self.rhs / self.lhs
        }
    }
}

/// Evaluates the pattern-to-routing ratio and its analytic bound. Inputs that
/// violate the bound's coherence assumptions (`ε_{V₀} ≤ 1`,
/// `1 − λ⊥ ε_{δV} > 0`) give [`Error::OutOfRegime`].
pub fn routing_dominance_bound(a0: &Matrix, v0: &Matrix, ds: &Matrix, dv: &Matrix) -> Result<BoundCheck> {
    check_stochastic(a0)?;
    let n = a0.rows();
    if v0.rows() != n || dv.shape() != v0.shape() || ds.shape() != (n, n) {
        return Err(Error::Dimension("A0 (N x N), V0 and dV (N x d), dS (N x N) required".into()));
    }
    if !(v0.is_finite() && dv.is_finite() && ds.is_finite()) {
        return Err(Error::Input("bound inputs must be finite".into()));
    }
    let p0v0 = project_constant(v0).frobenius_norm();
    let p0dv = project_constant(dv).frobenius_norm();
    if p0v0 == 0.0 || p0dv == 0.0 {
        return Err(Error::OutOfRegime("no constant-token component in V0 or dV".into()));
    }
    let eps_v0 = project_mean_free(v0).frobenius_norm() / p0v0;
    let eps_dv = project_mean_free(dv).frobenius_norm() / p0dv;
    if eps_v0 > 1.0 {
        return Err(Error::OutOfRegime(format!("V0 not dominated by its constant component (eps = {eps_v0})")));
    }
    let lambda_perp = perp_operator_norm(a0)?;
    let denom = 1.0 - lambda_perp * eps_dv;
    if !(denom > 0.0) {
        return Err(Error::OutOfRegime(format!("1 - lambda_perp * eps_dV = {denom} is not positive")));
    }
    let n_eff_min = effective_attention_width(a0)?.into_iter().fold(f64::INFINITY, f64::min);
    let ds_max = ds.max_abs();

    let routing = a0.matmul(dv)?.frobenius_norm();
    let pattern = softmax_jacobian_rows(a0, ds)?.matmul(v0)?.frobenius_norm();
    let lhs = pattern / routing;
    let rhs = 2.0 * (n as f64).sqrt() * ds_max * eps_v0 / (n_eff_min.sqrt() * denom) * p0v0 / p0dv;
    Ok(BoundCheck { lhs, rhs, holds: lhs <= rhs + BOUND_ROUNDING, eps_v0, eps_dv, lambda_perp, n_eff_min, ds_max })
}
