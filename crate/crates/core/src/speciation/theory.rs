use crate::diffusion::GaussianMixture;
use crate::error::{Error, Result};
use crate::linear_response::nonlinear_remainder;
use crate::numerics::{bisect_root, dot, norm, Matrix};
use crate::speciation::ModalProjection;

pub const SELF_CONSISTENCY_TOL: f64 = 1e-12;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("score gain gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `c((1−η)c + γ)`, rejected unless positive.
fn denominator(c: f64, eta: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(c > 0.0) {
        return Err(Error::Input(format!("projected covariance must be positive, got {c}")));
    }
    let d = c * ((1.0 - eta) * c + gamma);
    if !(d > 0.0) {
        return Err(Error::OutOfRegime(format!(
            "eta = {eta} >= 1 + gamma/c = {}: difference mode amplified faster than the score restores it",
            1.0 + gamma / c
        )));
    }
    Ok(d)
}

/// Modewise speciation parameter `κ = γ m² / (c((1−η)c + γ))`.
pub fn kappa(proj: &ModalProjection, gamma: f64) -> Result<f64> {
    Ok(gamma * proj.m * proj.m / denominator(proj.c, proj.eta, gamma)?)
}

/// `SNR = m² / (c((1−η)c + γ))`.
pub fn snr(proj: &ModalProjection, gamma: f64) -> Result<f64> {
    Ok(proj.m * proj.m / denominator(proj.c, proj.eta, gamma)?)
}

/// The same SNR written through the gain components and `μ = 1/c`:
/// `m²μ² / (γμ − λ^MLP − ρχ − ξπ)`.
pub fn snr_expanded(proj: &ModalProjection, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let (rho, xi) = crate::dit::gating_functions(proj.g)?;
    let mu = proj.mu();
    let d = gamma * mu - proj.lambda_mlp - rho * proj.chi - xi * proj.pi;
    if !(d > 0.0) {
        return Err(Error::OutOfRegime(format!("gamma*mu = {} does not exceed the block gain", gamma * mu)));
    }
    Ok(proj.m * proj.m * mu * mu / d)
}

/// Ordered product of per-block gains; `1` for an empty prefix.
pub fn cumulative_gain(etas: &[f64]) -> f64 {
    etas.iter().product()
}

/// SNR with the branch separation propagated as `m = G·m_init`.
pub fn propagated_snr(gain: f64, m_init: f64, c: f64, eta: f64, gamma: f64) -> Result<f64> {
    let m = gain * m_init;
    Ok(m * m / denominator(c, eta, gamma)?)
}

/// Nonnegative root of `u = κ tanh u`: zero for `κ ≤ 1`, otherwise the
/// positive branch by bisection on `[tol, κ]`.
pub fn solve_self_consistency(kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    if kappa <= 1.0 {
        return Ok(0.0);
    }
    bisect_root(|u| u - kappa * u.tanh(), SELF_CONSISTENCY_TOL, kappa, SELF_CONSISTENCY_TOL)
}

fn check_dims(v: &[f64], k: &Matrix, mix: &GaussianMixture) -> Result<()> {
    if k.shape() != (v.len(), v.len()) || mix.dim() != v.len() {
        return Err(Error::Dimension(format!(
            "v of length {} against K {:?} and a {}-d mixture",
            v.len(),
            k.shape(),
            mix.dim()
        )));
    }
    Ok(())
}

/// `‖[(I − K)+γC⁻¹]v − γC⁻¹m tanh(mᵀC⁻¹v)‖`.
pub fn fixed_point_residual(v: &[f64], k: &Matrix, mix: &GaussianMixture, gamma: f64) -> Result<f64> {
    check_dims(v, k, mix)?;
    let kv = k.matvec(v)?;
    let cv = mix.precision().matvec(v)?;
    let w = mix.precision_mean();
    let t = gamma * dot(w, v).tanh();
    let r: Vec<f64> = (0..v.len()).map(|i| v[i] - kv[i] + gamma * cv[i] - t * w[i]).collect();
    Ok(norm(&r))
}

/// The same residual written with `K̃ = K − γΛ_eff` and the nonlinear
/// remainder: `‖(I − K̃)v − γC⁻¹m[tanh(x) − x]‖`.
pub fn repartitioned_residual(v: &[f64], k_tilde: &Matrix, mix: &GaussianMixture, gamma: f64) -> Result<f64> {
    check_dims(v, k_tilde, mix)?;
    let kv = k_tilde.matvec(v)?;
    let rem = nonlinear_remainder(mix, gamma, v)?;
    let r: Vec<f64> = (0..v.len()).map(|i| v[i] - kv[i] - rem[i]).collect();
    Ok(norm(&r))
}
