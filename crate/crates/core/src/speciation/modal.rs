use serde::{Deserialize, Serialize};

use crate::dit::gating_functions;
use crate::error::{Error, Result};
use crate::linear_response::PropagatorSpec;
use crate::numerics::{dot, norm, Matrix};

pub const UNIT_TOL: f64 = 1e-12;

/// Projection of covariance, branch separation and one-block gain onto a
/// single mode `r_k`, with the gain split into its MLP, routing and pattern
/// parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalProjection {
    pub k: usize,
    /// `r_kᵀ C r_k`.
    pub c: f64,
    /// `r_kᵀ m`.
    pub m: f64,
    /// `r_kᵀ K_g r_k`.
    pub eta: f64,
    pub lambda_mlp: f64,
    /// Routing gain `r_kᵀ R r_k`.
    pub chi: f64,
    /// Pattern gain `r_kᵀ P(g) r_k`.
    pub pi: f64,
    pub g: f64,
}

impl ModalProjection {
    /// Synthetic projection with `η` assembled from its components.
    pub fn from_components(k: usize, c: f64, m: f64, lambda_mlp: f64, chi: f64, pi: f64, g: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Input(format!("projected covariance must be positive, got {c}")));
        }
        if ![m, lambda_mlp, chi, pi].iter().all(|x| x.is_finite()) {
            return Err(Error::Input("modal components must be finite".into()));
        }
        let mut p = Self { k, c, m, eta: 0.0, lambda_mlp, chi, pi, g };
        p.eta = p.eta_from_components()?;
        Ok(p)
    }

    pub fn mu(&self) -> f64 {
        1.0 / self.c
    }

    /// `1 + λ^MLP + ρ(g)χ + ξ(g)π`.
    pub fn eta_from_components(&self) -> Result<f64> {
        let (rho, xi) = gating_functions(self.g)?;
        Ok(1.0 + self.lambda_mlp + rho * self.chi + xi * self.pi)
    }

    /// Same mode at a different coupling, with `η` reassembled. `π` is kept,
    /// i.e. the pattern operator is treated as `g`-independent.
    pub fn at_coupling(&self, g: f64) -> Result<Self> {
        let mut p = Self { g, ..*self };
        p.eta = p.eta_from_components()?;
        Ok(p)
    }
}

fn quad(a: &Matrix, r: &[f64]) -> Result<f64> {
    Ok(dot(r, &a.matvec(r)?))
}

/// Projects `C`, `m` and every propagator component onto the unit vector `r`.
pub fn project_modal(k: usize, r: &[f64], c: &Matrix, m: &[f64], prop: &PropagatorSpec) -> Result<ModalProjection> {
    let n = norm(r);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Input(format!("mode vector must have unit norm, got {n}")));
    }
    if c.shape() != (r.len(), r.len()) || m.len() != r.len() || prop.dim() != r.len() {
        return Err(Error::Dimension(format!(
            "mode of length {} against C {:?}, m {}, K {}",
            r.len(),
            c.shape(),
            m.len(),
            prop.dim()
        )));
    }
    let ck = quad(c, r)?;
    if !(ck > 0.0) {
        return Err(Error::Input(format!("projected covariance must be positive, got {ck}")));
    }
    Ok(ModalProjection {
        k,
        c: ck,
        m: dot(r, m),
        eta: quad(&prop.k_g, r)?,
        lambda_mlp: quad(&prop.j_mlp, r)?,
        chi: quad(&prop.r, r)?,
        pi: quad(&prop.p(), r)?,
        g: prop.g,
    })
}

/// Largest `|r_iᵀ K r_j|`, `i ≠ j`, over the columns of `basis`: the linear
/// mode mixing neglected by the single-mode ansatz.
pub fn mode_mixing(k: &Matrix, basis: &Matrix) -> Result<f64> {
    let projected = basis.transpose().matmul(&k.matmul(basis)?)?;
    let mut worst = 0.0f64;
    for i in 0..projected.rows() {
        for j in 0..projected.cols() {
            if i != j {
                worst = worst.max(projected[(i, j)].abs());
            }
        }
    }
    Ok(worst)
}

/// Cosine between `m` and its projection onto the span of the orthonormal
/// columns of `basis`.
pub fn alignment_cosine(m: &[f64], basis: &Matrix) -> Result<f64> {
    let nm = norm(m);
    if nm == 0.0 {
        return Ok(0.0);
    }
    let coeffs = basis.matvec_transposed(m)?;
    Ok(norm(&coeffs) / nm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembled_gain() {
        let p = ModalProjection::from_components(0, 0.5, 1.0, 0.1, 0.4, -0.05, 0.3).unwrap();
        let (rho, xi) = gating_functions(0.3).unwrap();
        assert!((p.eta - (1.1 + rho * 0.4 - xi * 0.05)).abs() < 1e-15);
        assert!((p.at_coupling(1.0).unwrap().eta - (1.1 - 0.025)).abs() < 1e-15);
        assert!(ModalProjection::from_components(0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mixing_and_alignment() {
        let basis = Matrix::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let k = Matrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![-0.3, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!((mode_mixing(&k, &basis).unwrap() - 0.3).abs() < 1e-15);
        assert!((alignment_cosine(&[3.0, 0.0, 4.0], &basis).unwrap() - 0.6).abs() < 1e-15);
    }
}
