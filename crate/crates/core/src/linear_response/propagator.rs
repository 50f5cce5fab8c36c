use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::GaussianMixture;
use crate::dit::{gating_functions, head_projections, logits, single_attention, DitModel};
use crate::error::{Error, Result};
use crate::numerics::{dot, softmax_rows, Matrix};

pub const FD_EPS_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Per-layer linear propagator of the difference mode `v = (H_A − H_B)/√2`
/// around a symmetric state, acting on the row-major flattening of `v`
/// (index `token · d_model + channel`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSpec {
    pub layer: usize,
    pub g: f64,
    pub rho: f64,
    pub xi: f64,
    pub fd_eps: f64,
    pub tokens: usize,
    pub d_model: usize,
    /// `I + J_MLP + ρR + ξP(g)`.
    pub k_g: Matrix,
    pub j_mlp: Matrix,
    /// Routing operator with the attention gate `α` folded in.
    pub r: Matrix,
    /// Intra-block (`δA⁺`) part of the pattern operator.
    pub p_plus: Matrix,
    /// Inter-block (`δA⁻`) part; `P(g) = P⁺ + g P⁻`.
    pub p_minus: Matrix,
    /// `‖J_MLP (ρR + ξP)‖_F`, the cross term left out of `k_g`.
    pub cross_term_norm: f64,
}

impl PropagatorSpec {
    pub fn dim(&self) -> usize {
        self.k_g.rows()
    }

    pub fn identity(&self) -> Matrix {
        Matrix::identity(self.dim())
    }

    pub fn p(&self) -> Matrix {
        self.p_plus.add_scaled(self.g, &self.p_minus).expect("same shape")
    }

    /// `ρR + ξP(g)`.
    pub fn attention_part(&self) -> Matrix {
        self.r.scale(self.rho).add_scaled(self.xi, &self.p()).expect("same shape")
    }

    /// `I + J_MLP + ρR + ξP(g)` recomputed from the stored components.
    pub fn component_sum(&self) -> Matrix {
        self.identity().add(&self.j_mlp).and_then(|m| m.add(&self.attention_part())).expect("same shape")
    }

    pub fn cross_term(&self) -> Matrix {
        self.j_mlp.matmul(&self.attention_part()).expect("same shape")
    }

    /// `(I + J_MLP)(I + ρR + ξP)`, keeping the cross term.
    pub fn k_exact(&self) -> Matrix {
        self.k_g.add(&self.cross_term()).expect("same shape")
    }

    /// Largest entry of `J_MLP` coupling two different tokens.
    pub fn j_mlp_offblock_max(&self) -> f64 {
        let d = self.d_model;
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i / d != j / d {
                    worst = worst.max(self.j_mlp[(i, j)].abs());
                }
            }
        }
        worst
    }

    /// Same propagator at a different coupling; reuses `R`, `P⁺`, `P⁻`, `J_MLP`,
    /// which do not depend on `g`.
    pub fn at_coupling(&self, g: f64) -> Result<Self> {
        let (rho, xi) = gating_functions(g)?;
        let mut out = Self { g, rho, xi, ..self.clone() };
        let attn = out.attention_part();
        out.k_g = Matrix::identity(self.dim()).add(&out.j_mlp)?.add(&attn)?;
        out.cross_term_norm = out.j_mlp.matmul(&attn)?.frobenius_norm();
        Ok(out)
    }
}

fn bump(h: &Matrix, index: usize, by: f64) -> Matrix {
    let mut out = h.clone();
    out.data_mut()[index] += by;
    out
}

/// Builds `R`, `P(g)` and `J_MLP` of `layer` column by column with central
/// differences of step `fd_eps` through the exact forward pass, around the
/// symmetric state `H_A = H_B = h0` at reverse step `step`.
pub fn build_propagator(
    model: &DitModel,
    layer: usize,
    step: usize,
    h0: &Matrix,
    g: f64,
    fd_eps: f64,
) -> Result<PropagatorSpec> {
    let (rho, xi) = gating_functions(g)?;
    if !(FD_EPS_RANGE.0..=FD_EPS_RANGE.1).contains(&fd_eps) {
        return Err(Error::Config(format!(
            "fd_eps must lie in [{}, {}], got {fd_eps}",
            FD_EPS_RANGE.0, FD_EPS_RANGE.1
        )));
    }
    let cfg = &model.config;
    if layer >= cfg.layers {
        return Err(Error::Bounds { index: layer, max: cfg.layers - 1 });
    }
    let (n, d) = (cfg.tokens(), cfg.d_model);
    if h0.shape() != (n, d) {
        return Err(Error::Dimension(format!("state {:?}, expected ({n}, {d})", h0.shape())));
    }
    let d_h = model.d_h();
    let w = &model.layers[layer].attn;
    let m = model.modulation(layer, &model.conditioning(step))?;
    let alpha = &cfg.alpha[layer];
    let beta = &cfg.beta[layer];

    let x0 = model.attention_input(h0, &m);
    let (q0, k0, v0) = head_projections(w, &x0, d_h)?;
    let a0 = q0.iter().zip(&k0).map(|(q, k)| softmax_rows(&logits(q, k)?)).collect::<Result<Vec<_>>>()?;
    // At the symmetric state every block sees the same kernel, so the
    // coupled output equals plain self-attention for any g.
    let attn0 = single_attention(w, d_h, &x0)?;
    let h_tilde0 = Matrix::from_fn(n, d, |i, j| h0[(i, j)] + alpha[j] * attn0[(i, j)]);

    let dim = n * d;
    let half = fd_eps * std::f64::consts::FRAC_1_SQRT_2;
    let gated = |msgs: Vec<Matrix>, denom: f64| -> Result<Vec<f64>> {
        let out = Matrix::hstack(&msgs)?.matmul(&w.wo)?;
        Ok(out.data().iter().enumerate().map(|(i, x)| alpha[i % d] * x / denom).collect())
    };
    let columns: Vec<[Vec<f64>; 4]> = (0..dim)
        .into_par_iter()
        .map(|j| -> Result<[Vec<f64>; 4]> {
            let xp = model.attention_input(&bump(h0, j, half), &m);
            let xm = model.attention_input(&bump(h0, j, -half), &m);
            let (qp, kp, vp) = head_projections(w, &xp, d_h)?;
            let (qm, km, vm) = head_projections(w, &xm, d_h)?;
            let mut routing = Vec::with_capacity(q0.len());
            let mut plus = Vec::with_capacity(q0.len());
            let mut minus = Vec::with_capacity(q0.len());
            for hd in 0..q0.len() {
                routing.push(a0[hd].matmul(&vp[hd].sub(&vm[hd])?)?);
                let aa = softmax_rows(&logits(&qp[hd], &kp[hd])?)?;
                let bb = softmax_rows(&logits(&qm[hd], &km[hd])?)?;
                let ab = softmax_rows(&logits(&qp[hd], &km[hd])?)?;
                let ba = softmax_rows(&logits(&qm[hd], &kp[hd])?)?;
                plus.push(aa.sub(&bb)?.matmul(&v0[hd])?);
                minus.push(ab.sub(&ba)?.matmul(&v0[hd])?);
            }
            let denom = std::f64::consts::SQRT_2 * fd_eps;
            let r = gated(routing, denom)?;
            let pp = gated(plus, denom)?;
            let pm = gated(minus, denom)?;

            let up = model.mlp(layer, &model.mlp_input(&bump(&h_tilde0, j, fd_eps), &m))?;
            let down = model.mlp(layer, &model.mlp_input(&bump(&h_tilde0, j, -fd_eps), &m))?;
            let jm = up
                .data()
                .iter()
                .zip(down.data())
                .enumerate()
                .map(|(i, (a, b))| beta[i % d] * (a - b) / (2.0 * fd_eps))
                .collect();
            Ok([jm, r, pp, pm])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mats = [Matrix::zeros(dim, dim), Matrix::zeros(dim, dim), Matrix::zeros(dim, dim), Matrix::zeros(dim, dim)];
    for (j, col) in columns.iter().enumerate() {
        for (mat, c) in mats.iter_mut().zip(col) {
            mat.set_col(j, c);
        }
    }
    let [j_mlp, r, p_plus, p_minus] = mats;
    let spec = PropagatorSpec {
        layer,
        g,
        rho,
        xi,
        fd_eps,
        tokens: n,
        d_model: d,
        k_g: Matrix::zeros(dim, dim),
        j_mlp,
        r,
        p_plus,
        p_minus,
        cross_term_norm: 0.0,
    };
    spec.at_coupling(g)
}

/// Exact one-block update of the difference mode: runs the coupled block on
/// `H₀ ± v/√2` and returns `(H⁺_A − H⁺_B)/√2`.
pub fn block_difference(
    model: &DitModel,
    layer: usize,
    step: usize,
    h0: &Matrix,
    v: &Matrix,
    g: f64,
) -> Result<Matrix> {
    let half = v.scale(std::f64::consts::FRAC_1_SQRT_2);
    let cond = model.conditioning(step);
    let (a, b) = model.block_pair(layer, &h0.add(&half)?, &h0.sub(&half)?, &cond, g)?;
    Ok(a.sub(&b)?.scale(std::f64::consts::FRAC_1_SQRT_2))
}

/// Like [`block_difference`] but stopping after the attention half.
pub fn attention_half_difference(
    model: &DitModel,
    layer: usize,
    step: usize,
    h0: &Matrix,
    v: &Matrix,
    g: f64,
) -> Result<Matrix> {
    let half = v.scale(std::f64::consts::FRAC_1_SQRT_2);
    let cond = model.conditioning(step);
    let (a, b) = model.attention_half_pair(layer, &h0.add(&half)?, &h0.sub(&half)?, &cond, g)?;
    Ok(a.sub(&b)?.scale(std::f64::consts::FRAC_1_SQRT_2))
}

/// `K̃ = K − γ Λ_eff`: moves the linear part of the mixture score into the
/// propagator.
pub fn repartition(k: &Matrix, mix: &GaussianMixture, gamma: f64) -> Result<Matrix> {
    if k.shape() != (mix.dim(), mix.dim()) {
        return Err(Error::Dimension(format!("propagator {:?} for a {}-d mixture", k.shape(), mix.dim())));
    }
    k.add_scaled(-gamma, &mix.effective_precision())
}

pub fn repartition_propagator(spec: &PropagatorSpec, mix: &GaussianMixture, gamma: f64) -> Result<Matrix> {
    repartition(&spec.k_g, mix, gamma)
}

/// `γ C⁻¹m [tanh(x) − x]` with `x = mᵀC⁻¹v`: what is left of the score drive
/// once its linearization has been moved into `K̃`.
pub fn nonlinear_remainder(mix: &GaussianMixture, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != mix.dim() {
        return Err(Error::Dimension(format!("vector of length {} for a {}-d mixture", v.len(), mix.dim())));
    }
    let w = mix.precision_mean();
    let x = dot(w, v);
    let f = gamma * (x.tanh() - x);
    Ok(w.iter().map(|wi| f * wi).collect())
}
