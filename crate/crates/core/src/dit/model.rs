use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{scaled_difference, PairPrediction, ScoreBackend};
use crate::dit::attention::{single_attention, AttentionWeights, GatedAttention};
use crate::dit::patch::{patchify, unpatchify, TokenSequence};
use crate::dit::DitConfig;
use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, standard_normal};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// One transformer block. `adaln` maps the conditioning vector to
/// `[shift1, scale1, shift2, scale2]` (each `d_model` wide).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    #[serde(flatten)]
    pub attn: AttentionWeights,
    pub mlp: MlpWeights,
    pub adaln: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedWeights {
    /// `p²C × d_model`
    pub patch: Matrix,
    /// `N × d_model`
    pub pos: Matrix,
    /// `num_classes × d_model`
    pub class: Matrix,
}

/// Toy Diffusion Transformer with gated replica attention.
///
/// JSON layout (all matrices `{rows, cols, data}` row-major):
///
/// ```text
/// { "config": DitConfig,
///   "layers": [ { "Wq", "Wk", "Wv", "Wo", "mlp": {w1, b1, w2, b2}, "adaln" } ],
///   "embed": { "patch", "pos", "class" },
///   "final_adaln": d_model × 2·d_model,
///   "decoder": (2·d_model + 1) × p²C }
/// ```
///
/// The decoder reads, per token, `[H_L, adaLN_final(H_L), 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitModel {
    pub config: DitConfig,
    pub layers: Vec<LayerWeights>,
    pub embed: EmbedWeights,
    pub final_adaln: Matrix,
    pub decoder: Matrix,
}

/// adaLN shift/scale pairs of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub shift1: Vec<f64>,
    pub scale1: Vec<f64>,
    pub shift2: Vec<f64>,
    pub scale2: Vec<f64>,
}

const MODULATION_SCALE: f64 = 0.1;
const POS_SCALE: f64 = 0.5;

fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64, stream: &[u64]) -> Matrix {
    let mut rng = rng_for(seed, stream);
    Matrix::from_fn(rows, cols, |_, _| std * standard_normal(&mut rng))
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Per-token LayerNorm without affine parameters.
pub fn layer_norm(h: &Matrix, eps: f64) -> Matrix {
    let mut out = h.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for x in row.iter_mut() {
            *x = (*x - mean) * inv;
        }
    }
    out
}

/// Jacobian-vector product of [`layer_norm`] at `h` along `dh`.
pub fn layer_norm_jvp(h: &Matrix, dh: &Matrix, eps: f64) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    let n = h.cols() as f64;
    for i in 0..h.rows() {
        let row = h.row(i);
        let d = dh.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
        let d_mean = d.iter().sum::<f64>() / n;
        let proj = xhat.iter().zip(d).map(|(x, y)| x * y).sum::<f64>() / n;
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = inv * (d[j] - d_mean - xhat[j] * proj);
        }
    }
    out
}

/// `(1 + scale) ⊙ LN(h) + shift`, tokenwise.
pub fn modulate(normed: &Matrix, shift: &[f64], scale: &[f64]) -> Matrix {
    let mut out = normed.clone();
    for i in 0..out.rows() {
        for (j, x) in out.row_mut(i).iter_mut().enumerate() {
            *x = (1.0 + scale[j]) * *x + shift[j];
        }
    }
    out
}

/// `H + gate ⊙ branch`, tokenwise.
fn gated_residual(h: &Matrix, gate: &[f64], branch: &Matrix) -> Matrix {
    let mut out = h.clone();
    for i in 0..out.rows() {
        let b = branch.row(i);
        for (j, x) in out.row_mut(i).iter_mut().enumerate() {
            *x += gate[j] * b[j];
        }
    }
    out
}

pub fn sinusoidal_embedding(step: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        e[i] = (step * freq).sin();
        e[half + i] = (step * freq).cos();
    }
    e
}

impl DitModel {
    /// Random frozen weights with a zero decoder.
    pub fn random(config: DitConfig) -> Result<Self> {
        config.validate()?;
        let (d, hd, f) = (config.d_model, config.heads * config.d_h, config.mlp_hidden);
        let seed = config.rng_seed;
        let layers = (0..config.layers as u64)
            .map(|l| LayerWeights {
                attn: AttentionWeights {
                    wq: gaussian_matrix(d, hd, 1.0 / (d as f64).sqrt(), seed, &[l, 0]),
                    wk: gaussian_matrix(d, hd, 1.0 / (d as f64).sqrt(), seed, &[l, 1]),
                    wv: gaussian_matrix(d, hd, 1.0 / (d as f64).sqrt(), seed, &[l, 2]),
                    wo: gaussian_matrix(hd, d, 1.0 / (hd as f64).sqrt(), seed, &[l, 3]),
                },
                mlp: MlpWeights {
                    w1: gaussian_matrix(d, f, 1.0 / (d as f64).sqrt(), seed, &[l, 4]),
                    b1: vec![0.0; f],
                    w2: gaussian_matrix(f, d, 1.0 / (f as f64).sqrt(), seed, &[l, 5]),
                    b2: vec![0.0; d],
                },
                adaln: gaussian_matrix(d, 4 * d, MODULATION_SCALE / (d as f64).sqrt(), seed, &[l, 6]),
            })
            .collect();
        let p = config.patch_dim();
        let embed = EmbedWeights {
            patch: gaussian_matrix(p, d, 1.0 / (p as f64).sqrt(), seed, &[1000, 0]),
            pos: gaussian_matrix(config.tokens(), d, POS_SCALE, seed, &[1000, 1]),
            class: gaussian_matrix(config.num_classes, d, 1.0, seed, &[1000, 2]),
        };
        let final_adaln = gaussian_matrix(d, 2 * d, MODULATION_SCALE / (d as f64).sqrt(), seed, &[1000, 3]);
        let decoder = Matrix::zeros(2 * d + 1, p);
        let model = Self { config, layers, embed, final_adaln, decoder };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (d, hd, f, p) = (c.d_model, c.heads * c.d_h, c.mlp_hidden, c.patch_dim());
        let check = |name: &str, m: &Matrix, shape: (usize, usize)| -> Result<()> {
            if m.shape() != shape {
                return Err(Error::Config(format!("{name} has shape {:?}, expected {shape:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        if self.layers.len() != c.layers {
            return Err(Error::Config(format!("{} layer weight sets for {} layers", self.layers.len(), c.layers)));
        }
        for (l, w) in self.layers.iter().enumerate() {
            check(&format!("layers[{l}].Wq"), &w.attn.wq, (d, hd))?;
            check(&format!("layers[{l}].Wk"), &w.attn.wk, (d, hd))?;
            check(&format!("layers[{l}].Wv"), &w.attn.wv, (d, hd))?;
            check(&format!("layers[{l}].Wo"), &w.attn.wo, (hd, d))?;
            check(&format!("layers[{l}].mlp.w1"), &w.mlp.w1, (d, f))?;
            check(&format!("layers[{l}].mlp.w2"), &w.mlp.w2, (f, d))?;
            check(&format!("layers[{l}].adaln"), &w.adaln, (d, 4 * d))?;
            if w.mlp.b1.len() != f || w.mlp.b2.len() != d {
                return Err(Error::Config(format!("layers[{l}].mlp bias lengths are wrong")));
            }
        }
        check("embed.patch", &self.embed.patch, (p, d))?;
        check("embed.pos", &self.embed.pos, (c.tokens(), d))?;
        check("embed.class", &self.embed.class, (c.num_classes, d))?;
        check("final_adaln", &self.final_adaln, (d, 2 * d))?;
        check("decoder", &self.decoder, (2 * d + 1, p))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn d_h(&self) -> usize {
        self.config.d_h
    }

    /// `silu(sinusoidal(s) + class embedding)`.
    pub fn conditioning(&self, step: usize) -> Vec<f64> {
        let e = sinusoidal_embedding(step as f64, self.config.d_model);
        let class = self.embed.class.row(self.config.class_label);
        e.iter().zip(class).map(|(a, b)| silu(a + b)).collect()
    }

    pub fn modulation(&self, layer: usize, cond: &[f64]) -> Result<Modulation> {
        let m = self.layers[layer].adaln.matvec_transposed(cond)?;
        let d = self.config.d_model;
        Ok(Modulation {
            shift1: m[..d].to_vec(),
            scale1: m[d..2 * d].to_vec(),
            shift2: m[2 * d..3 * d].to_vec(),
            scale2: m[3 * d..].to_vec(),
        })
    }

    pub fn embed_latent(&self, z: &[f64]) -> Result<TokenSequence> {
        patchify(z, &self.config)?.matmul(&self.embed.patch)?.add(&self.embed.pos)
    }

    pub fn attention_input(&self, h: &Matrix, m: &Modulation) -> Matrix {
        modulate(&layer_norm(h, self.config.ln_eps), &m.shift1, &m.scale1)
    }

    pub fn mlp_input(&self, h: &Matrix, m: &Modulation) -> Matrix {
        modulate(&layer_norm(h, self.config.ln_eps), &m.shift2, &m.scale2)
    }

    pub fn mlp(&self, layer: usize, x: &Matrix) -> Result<Matrix> {
        let w = &self.layers[layer].mlp;
        let mut hidden = x.matmul(&w.w1)?;
        for i in 0..hidden.rows() {
            for (v, b) in hidden.row_mut(i).iter_mut().zip(&w.b1) {
                *v = gelu(*v + b);
            }
        }
        let mut out = hidden.matmul(&w.w2)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&w.b2) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// MLP half of a block: `H̃ + β ⊙ MLP(adaLN₂(H̃))`.
    pub fn mlp_branch(&self, layer: usize, h_tilde: &Matrix, m: &Modulation) -> Result<Matrix> {
        let out = self.mlp(layer, &self.mlp_input(h_tilde, m))?;
        Ok(gated_residual(h_tilde, &self.config.beta[layer], &out))
    }

    fn check_tokens(&self, h: &Matrix) -> Result<()> {
        if h.shape() != (self.config.tokens(), self.config.d_model) {
            return Err(Error::Dimension(format!(
                "token sequence {:?}, expected ({}, {})",
                h.shape(),
                self.config.tokens(),
                self.config.d_model
            )));
        }
        Ok(())
    }

    /// Block on a single replica.
    pub fn block_single(&self, layer: usize, h: &Matrix, cond: &[f64]) -> Result<Matrix> {
        self.check_tokens(h)?;
        let m = self.modulation(layer, cond)?;
        let attn = single_attention(&self.layers[layer].attn, self.d_h(), &self.attention_input(h, &m))?;
        let h_tilde = gated_residual(h, &self.config.alpha[layer], &attn);
        self.mlp_branch(layer, &h_tilde, &m)
    }

    /// Post-attention states `H̃` of both replicas.
    pub fn attention_half_pair(
        &self,
        layer: usize,
        ha: &Matrix,
        hb: &Matrix,
        cond: &[f64],
        g: f64,
    ) -> Result<(Matrix, Matrix)> {
        self.check_tokens(ha)?;
        self.check_tokens(hb)?;
        let m = self.modulation(layer, cond)?;
        let w = &self.layers[layer].attn;
        let att =
            GatedAttention::evaluate(w, self.d_h(), &self.attention_input(ha, &m), &self.attention_input(hb, &m), g)?;
        let (oa, ob) = att.outputs(w)?;
        let alpha = &self.config.alpha[layer];
        Ok((gated_residual(ha, alpha, &oa), gated_residual(hb, alpha, &ob)))
    }

    /// Block on a replica pair with gated attention.
    pub fn block_pair(&self, layer: usize, ha: &Matrix, hb: &Matrix, cond: &[f64], g: f64) -> Result<(Matrix, Matrix)> {
        let m = self.modulation(layer, cond)?;
        let (ta, tb) = self.attention_half_pair(layer, ha, hb, cond, g)?;
        Ok((self.mlp_branch(layer, &ta, &m)?, self.mlp_branch(layer, &tb, &m)?))
    }

    /// Decoder features `[H_L, adaLN_final(H_L), 1]` per token.
    pub fn features(&self, h_last: &Matrix, cond: &[f64]) -> Result<Matrix> {
        let d = self.config.d_model;
        let m = self.final_adaln.matvec_transposed(cond)?;
        let normed = modulate(&layer_norm(h_last, self.config.ln_eps), &m[..d], &m[d..]);
        let ones = Matrix::new(h_last.rows(), 1, vec![1.0; h_last.rows()])?;
        Matrix::hstack(&[h_last.clone(), normed, ones])
    }

    fn decode(&self, h_last: &Matrix, cond: &[f64]) -> Result<Vec<f64>> {
        unpatchify(&self.features(h_last, cond)?.matmul(&self.decoder)?, &self.config)
    }

    /// Final hidden state of an uncoupled pass plus every per-layer state (after each block).
    pub fn hidden_single(&self, z: &[f64], step: usize) -> Result<(Vec<Matrix>, Vec<f64>)> {
        let cond = self.conditioning(step);
        let mut h = self.embed_latent(z)?;
        let mut states = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            h = self.block_single(l, &h, &cond)?;
            states.push(h.clone());
        }
        Ok((states, cond))
    }

    /// Uncoupled noise prediction with per-layer hidden states.
    pub fn forward_single(&self, z: &[f64], step: usize) -> Result<(Vec<f64>, Vec<Matrix>)> {
        let (states, cond) = self.hidden_single(z, step)?;
        let eps = self.decode(states.last().expect("at least one layer"), &cond)?;
        Ok((eps, states))
    }

    /// Coupled noise prediction for both replicas with per-layer hidden states.
    pub fn forward_pair(&self, za: &[f64], zb: &[f64], step: usize, g: f64) -> Result<PairForward> {
        let cond = self.conditioning(step);
        let mut ha = self.embed_latent(za)?;
        let mut hb = self.embed_latent(zb)?;
        let mut states = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            (ha, hb) = self.block_pair(l, &ha, &hb, &cond, g)?;
            states.push((ha.clone(), hb.clone()));
        }
        Ok((self.decode(&ha, &cond)?, self.decode(&hb, &cond)?, states))
    }
}

/// `(ε̂_A, ε̂_B, per-layer (h_A, h_B))` from [`DitModel::forward_pair`].
pub type PairForward = (Vec<f64>, Vec<f64>, Vec<(Matrix, Matrix)>);

impl ScoreBackend for DitModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    fn capture_layers(&self) -> usize {
        self.config.layers
    }

    fn couples_internally(&self) -> bool {
        true
    }

    fn predict(&self, z: &[f64], s: usize) -> Result<Vec<f64>> {
        Ok(self.forward_single(z, s)?.0)
    }

    fn predict_with_states(&self, z: &[f64], s: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (eps, states) = self.forward_single(z, s)?;
        Ok((eps, states.into_iter().map(|h| h.data().to_vec()).collect()))
    }

    fn predict_pair(&self, za: &[f64], zb: &[f64], s: usize, g: f64, capture: bool) -> Result<PairPrediction> {
        let (eps_a, eps_b, states) = self.forward_pair(za, zb, s, g)?;
        let captures = if capture {
            states.iter().map(|(a, b)| scaled_difference(a.data(), b.data())).collect()
        } else {
            Vec::new()
        };
        Ok(PairPrediction { eps_a, eps_b, captures })
    }
}
