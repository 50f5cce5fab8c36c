use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and initialization parameters of the toy DiT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DitConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Per-head width.
    pub d_h: usize,
    pub patch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mlp_hidden: usize,
    /// Attention-branch gates α_ℓ, one `d_model` vector per layer.
    pub alpha: Vec<Vec<f64>>,
    /// MLP-branch gates β_ℓ, one `d_model` vector per layer.
    pub beta: Vec<Vec<f64>>,
    /// LayerNorm epsilon (per-token centering, no affine).
    pub ln_eps: f64,
    pub num_classes: usize,
    /// Class used for conditioning.
    pub class_label: usize,
    pub rng_seed: u64,
}

pub const DEFAULT_GATE: f64 = 0.1;

impl Default for DitConfig {
    fn default() -> Self {
        let (layers, d_model) = (4, 32);
        Self {
            layers,
            heads: 2,
            d_model,
            d_h: 16,
            patch: 2,
            channels: 1,
            height: 8,
            width: 8,
            mlp_hidden: 128,
            alpha: vec![vec![DEFAULT_GATE; d_model]; layers],
            beta: vec![vec![DEFAULT_GATE; d_model]; layers],
            ln_eps: 1e-6,
            num_classes: 2,
            class_label: 0,
            rng_seed: 0,
        }
    }
}

impl DitConfig {
    /// Replaces every gate entry with the given constants.
    pub fn with_uniform_gates(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = vec![vec![alpha; self.d_model]; self.layers];
        self.beta = vec![vec![beta; self.d_model]; self.layers];
        self
    }

    /// Sets the depth, filling any new layers with default gates.
    pub fn with_layers(mut self, layers: usize) -> Self {
        let d = self.d_model;
        self.alpha.resize(layers, vec![DEFAULT_GATE; d]);
        self.beta.resize(layers, vec![DEFAULT_GATE; d]);
        self.layers = layers;
        self
    }

    /// Tokens per replica, `(H/p)(W/p)`.
    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Values per token before embedding, `p²C`.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn latent_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_h", self.d_h),
            ("patch", self.patch),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("mlp_hidden", self.mlp_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model != self.heads * self.d_h {
            return Err(Error::Config(format!(
                "d_model ({}) must equal heads·d_h ({}·{})",
                self.d_model, self.heads, self.d_h
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even for the sinusoidal step embedding".into()));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "patch size {} does not divide the {}x{} latent",
                self.patch, self.height, self.width
            )));
        }
        for (name, gates) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if gates.len() != self.layers || gates.iter().any(|g| g.len() != self.d_model) {
                return Err(Error::Config(format!(
                    "{name} gates must be {} vectors of length {}",
                    self.layers, self.d_model
                )));
            }
            if gates.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} gates must be finite")));
            }
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config(format!("ln_eps must be positive, got {}", self.ln_eps)));
        }
        if self.class_label >= self.num_classes {
            return Err(Error::Config(format!(
                "class {} out of range for {} classes",
                self.class_label, self.num_classes
            )));
        }
        Ok(())
    }
}
