use serde::{Deserialize, Serialize};

use crate::dit::{gating_functions, layer_norm_jvp, DitModel, GatedAttention};
use crate::dit::{head_projections, logits};
use crate::error::{Error, Result};
use crate::linear_response::jacobian::softmax_jacobian_rows;
use crate::numerics::{loglog_slope, lstsq, softmax_rows, Matrix};

/// Symmetry-breaking perturbation `scale · h` of a token sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub h: Matrix,
    pub scale: f64,
}

impl Perturbation {
    pub fn new(h: Matrix, scale: f64) -> Result<Self> {
        if !h.is_finite() {
            return Err(Error::Input("perturbation must be finite".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Input(format!("perturbation scale must be positive, got {scale}")));
        }
        Ok(Self { h, scale })
    }

    /// The perturbation actually applied, `scale · h`.
    pub fn effective(&self) -> Matrix {
        self.h.scale(self.scale)
    }
}

/// Split of the measured attention difference into its two first-order
/// pathways plus the remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDecomposition {
    /// `2 A₀ δV` (head-concatenated, after `Wo`).
    pub routing_term: Matrix,
    /// `2 (δA⁺ + g δA⁻) V₀`.
    pub pattern_term: Matrix,
    /// `Attn_A − Attn_B` from the exact forward pass.
    pub measured: Matrix,
    /// `measured − ρ·routing − ξ·pattern`.
    pub residual: Matrix,
    pub g: f64,
    pub rho: f64,
    pub xi: f64,
}

/// Least-squares coefficients of the two pathways in the measured difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefactorFit {
    pub routing: f64,
    pub pattern: f64,
}

impl ResponseDecomposition {
    /// Regresses `measured` on `[routing, pattern]`.
    pub fn fit_prefactors(&self) -> Result<PrefactorFit> {
        let n = self.measured.data().len();
        let design =
            Matrix::from_fn(
                n,
                2,
                |i, j| if j == 0 { self.routing_term.data()[i] } else { self.pattern_term.data()[i] },
            );
        let c = lstsq(&design, self.measured.data())?;
        Ok(PrefactorFit { routing: c[0], pattern: c[1] })
    }
}

/// Hidden state entering `layer` for latent `z` at reverse step `step`
/// (a single uncoupled replica, so the pair built from it is symmetric).
pub fn base_state(model: &DitModel, z: &[f64], step: usize, layer: usize) -> Result<Matrix> {
    if layer >= model.config.layers {
        return Err(Error::Bounds { index: layer, max: model.config.layers - 1 });
    }
    let cond = model.conditioning(step);
    let mut h = model.embed_latent(z)?;
    for l in 0..layer {
        h = model.block_single(l, &h, &cond)?;
    }
    Ok(h)
}

/// Runs gated attention of `layer` on `H₀ ± h/√2` and decomposes the output
/// difference against the analytically linearized routing and pattern terms.
pub fn measure_attention_difference(
    model: &DitModel,
    layer: usize,
    step: usize,
    h0: &Matrix,
    h: &Perturbation,
    g: f64,
) -> Result<ResponseDecomposition> {
    let (rho, xi) = gating_functions(g)?;
    if layer >= model.config.layers {
        return Err(Error::Bounds { index: layer, max: model.config.layers - 1 });
    }
    let d_h = model.d_h();
    let w = &model.layers[layer].attn;
    let m = model.modulation(layer, &model.conditioning(step))?;
    let delta = h.effective().scale(std::f64::consts::FRAC_1_SQRT_2);
    if delta.shape() != h0.shape() {
        return Err(Error::Dimension(format!("perturbation {:?} for state {:?}", delta.shape(), h0.shape())));
    }

    let xa = model.attention_input(&h0.add(&delta)?, &m);
    let xb = model.attention_input(&h0.sub(&delta)?, &m);
    let (oa, ob) = GatedAttention::evaluate(w, d_h, &xa, &xb, g)?.outputs(w)?;
    let measured = oa.sub(&ob)?;

    let x0 = model.attention_input(h0, &m);
    let scale1: Vec<f64> = m.scale1.iter().map(|s| 1.0 + s).collect();
    let dx_ln = layer_norm_jvp(h0, &delta, model.config.ln_eps);
    let dx = Matrix::from_fn(dx_ln.rows(), dx_ln.cols(), |i, j| scale1[j] * dx_ln[(i, j)]);
    let (q0, k0, v0) = head_projections(w, &x0, d_h)?;
    let (dq, dk, dv) = head_projections(w, &dx, d_h)?;

    let mut routing = Vec::with_capacity(q0.len());
    let mut pattern = Vec::with_capacity(q0.len());
    for hd in 0..q0.len() {
        let a0 = softmax_rows(&logits(&q0[hd], &k0[hd])?)?;
        let s_q = logits(&dq[hd], &k0[hd])?;
        let s_k = logits(&q0[hd], &dk[hd])?;
        let da_plus = softmax_jacobian_rows(&a0, &s_q.add(&s_k)?)?;
        let da_minus = softmax_jacobian_rows(&a0, &s_q.sub(&s_k)?)?;
        routing.push(a0.matmul(&dv[hd])?.scale(2.0));
        pattern.push(da_plus.add_scaled(g, &da_minus)?.matmul(&v0[hd])?.scale(2.0));
    }
    let routing_term = Matrix::hstack(&routing)?.matmul(&w.wo)?;
    let pattern_term = Matrix::hstack(&pattern)?.matmul(&w.wo)?;
    let residual = measured.add_scaled(-rho, &routing_term)?.add_scaled(-xi, &pattern_term)?;
    Ok(ResponseDecomposition { routing_term, pattern_term, measured, residual, g, rho, xi })
}

/// Remainder norms of the decomposition along a fixed direction over a range
/// of perturbation scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualScaling {
    pub g: f64,
    pub scales: Vec<f64>,
    pub residual_norms: Vec<f64>,
    /// Log–log slope of residual norm against scale.
    pub slope: f64,
}

pub fn residual_scaling(
    model: &DitModel,
    layer: usize,
    step: usize,
    h0: &Matrix,
    direction: &Matrix,
    g: f64,
    scales: &[f64],
) -> Result<ResidualScaling> {
    let norms = scales
        .iter()
        .map(|&s| {
            let p = Perturbation::new(direction.clone(), s)?;
            Ok(measure_attention_difference(model, layer, step, h0, &p, g)?.residual.frobenius_norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let slope = loglog_slope(scales, &norms)?;
    Ok(ResidualScaling { g, scales: scales.to_vec(), residual_norms: norms, slope })
}
