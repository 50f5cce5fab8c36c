use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix};

/// Attention projections of one layer. Head `h` uses columns
/// `h·d_h..(h+1)·d_h` of `wq`, `wk`, `wv` and rows of the same range of `wo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    #[serde(rename = "Wq")]
    pub wq: Matrix,
    #[serde(rename = "Wk")]
    pub wk: Matrix,
    #[serde(rename = "Wv")]
    pub wv: Matrix,
    #[serde(rename = "Wo")]
    pub wo: Matrix,
}

impl AttentionWeights {
    pub fn heads(&self, d_h: usize) -> usize {
        self.wq.cols() / d_h
    }
}

/// Prefactors `ρ(g) = (1−g)/(1+g)` of the routing pathway and `ξ(g) = 1/(1+g)`
/// of the pattern pathway.
pub fn gating_functions(g: f64) -> Result<(f64, f64)> {
    check_g(g).map_err(|_| Error::Domain(format!("g must lie in [0, 1], got {g}")))?;
    Ok(((1.0 - g) / (1.0 + g), 1.0 / (1.0 + g)))
}

fn check_g(g: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::Config(format!("coupling g must lie in [0, 1], got {g}")));
    }
    Ok(())
}

/// Block order used throughout: `[AA, AB, BA, BB]`, where `XY` means queries
/// from replica X attending to keys of replica Y.
pub const AA: usize = 0;
pub const AB: usize = 1;
pub const BA: usize = 2;
pub const BB: usize = 3;

/// Row softmax applied to each `N × N` block on its own.
pub fn blockwise_softmax(blocks: &[Matrix; 4]) -> Result<[Matrix; 4]> {
    let n = blocks[0].rows();
    if blocks.iter().any(|b| b.shape() != (n, n)) {
        return Err(Error::Dimension("logit blocks must all be N x N".into()));
    }
    Ok([softmax_rows(&blocks[0])?, softmax_rows(&blocks[1])?, softmax_rows(&blocks[2])?, softmax_rows(&blocks[3])?])
}

/// Per-head intermediate state of a replica-pair attention evaluation.
#[derive(Debug, Clone)]
pub struct HeadState {
    /// `[replica A, replica B]`
    pub q: [Matrix; 2],
    pub k: [Matrix; 2],
    pub v: [Matrix; 2],
    /// Scaled logits `QKᵀ/√d_h`, block order `[AA, AB, BA, BB]`.
    pub logits: [Matrix; 4],
    pub weights: [Matrix; 4],
}

/// Gated replica attention evaluated on a pair of (normalized) token sequences.
#[derive(Debug, Clone)]
pub struct GatedAttention {
    pub g: f64,
    pub heads: Vec<HeadState>,
}

pub(crate) fn head_projections(
    w: &AttentionWeights,
    x: &Matrix,
    d_h: usize,
) -> Result<(Vec<Matrix>, Vec<Matrix>, Vec<Matrix>)> {
    let q = x.matmul(&w.wq)?;
    let k = x.matmul(&w.wk)?;
    let v = x.matmul(&w.wv)?;
    let heads = w.heads(d_h);
    let split = |m: &Matrix| (0..heads).map(|h| m.col_block(h * d_h, (h + 1) * d_h)).collect::<Vec<_>>();
    Ok((split(&q), split(&k), split(&v)))
}

pub(crate) fn logits(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    Ok(q.matmul_transposed(k)?.scale(scale))
}

impl GatedAttention {
    pub fn evaluate(w: &AttentionWeights, d_h: usize, x_a: &Matrix, x_b: &Matrix, g: f64) -> Result<Self> {
        check_g(g)?;
        if x_a.shape() != x_b.shape() {
            return Err(Error::Dimension("replica token sequences differ in shape".into()));
        }
        let (qa, ka, va) = head_projections(w, x_a, d_h)?;
        let (qb, kb, vb) = head_projections(w, x_b, d_h)?;
        let mut heads = Vec::with_capacity(qa.len());
        for h in 0..qa.len() {
            let logits =
                [logits(&qa[h], &ka[h])?, logits(&qa[h], &kb[h])?, logits(&qb[h], &ka[h])?, logits(&qb[h], &kb[h])?];
            let weights = blockwise_softmax(&logits)?;
            heads.push(HeadState {
                q: [qa[h].clone(), qb[h].clone()],
                k: [ka[h].clone(), kb[h].clone()],
                v: [va[h].clone(), vb[h].clone()],
                logits,
                weights,
            });
        }
        Ok(Self { g, heads })
    }

    /// Head-concatenated intra (`A_XX V_X`) and inter (`A_XY V_Y`) messages
    /// for each replica, before the output projection.
    pub fn messages(&self) -> Result<([Matrix; 2], [Matrix; 2])> {
        let mut intra = [Vec::new(), Vec::new()];
        let mut inter = [Vec::new(), Vec::new()];
        for hs in &self.heads {
            intra[0].push(hs.weights[AA].matmul(&hs.v[0])?);
            intra[1].push(hs.weights[BB].matmul(&hs.v[1])?);
            inter[0].push(hs.weights[AB].matmul(&hs.v[1])?);
            inter[1].push(hs.weights[BA].matmul(&hs.v[0])?);
        }
        Ok((
            [Matrix::hstack(&intra[0])?, Matrix::hstack(&intra[1])?],
            [Matrix::hstack(&inter[0])?, Matrix::hstack(&inter[1])?],
        ))
    }

    /// `(1/(1+g))(intra + g·inter)` for both replicas, projected by `Wo`.
    pub fn outputs(&self, w: &AttentionWeights) -> Result<(Matrix, Matrix)> {
        let (intra, inter) = self.messages()?;
        let xi = 1.0 / (1.0 + self.g);
        let mix = |i: usize| -> Result<Matrix> {
            let m = if self.g == 0.0 { intra[i].clone() } else { intra[i].add_scaled(self.g, &inter[i])?.scale(xi) };
            m.matmul(&w.wo)
        };
        Ok((mix(0)?, mix(1)?))
    }
}

/// Ordinary multi-head self-attention of a single replica.
pub fn single_attention(w: &AttentionWeights, d_h: usize, x: &Matrix) -> Result<Matrix> {
    let (q, k, v) = head_projections(w, x, d_h)?;
    let mut msgs = Vec::with_capacity(q.len());
    for h in 0..q.len() {
        msgs.push(softmax_rows(&logits(&q[h], &k[h])?)?.matmul(&v[h])?);
    }
    Matrix::hstack(&msgs)?.matmul(&w.wo)
}

/// Gated attention over the concatenated `2N`-token sequence (replica A first).
pub fn gated_attention(w: &AttentionWeights, d_h: usize, x: &Matrix, g: f64) -> Result<Matrix> {
    if !x.rows().is_multiple_of(2) {
        return Err(Error::Dimension("concatenated sequence must hold two equal replicas".into()));
    }
    let n = x.rows() / 2;
    let att = GatedAttention::evaluate(w, d_h, &x.row_block(0, n), &x.row_block(n, 2 * n), g)?;
    let (a, b) = att.outputs(w)?;
    Matrix::vstack(&a, &b)
}
