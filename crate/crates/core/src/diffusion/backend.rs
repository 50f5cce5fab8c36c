use std::f64::consts::FRAC_1_SQRT_2;

use crate::diffusion::{GaussianMixture, NoiseSchedule};
use crate::error::{Error, Result};

/// Noise predictions for both replicas plus optional per-layer difference captures.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub eps_a: Vec<f64>,
    pub eps_b: Vec<f64>,
    /// One flattened `(h^A − h^B)/√2` per capture layer; empty unless requested.
    pub captures: Vec<Vec<f64>>,
}

/// A noise predictor usable by the samplers and protocols.
pub trait ScoreBackend: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Number of internal capture points reported by [`ScoreBackend::predict_pair`].
    fn capture_layers(&self) -> usize;

    /// Whether `g` acts inside the network. If not, samplers couple the latents
    /// themselves (see [`crate::diffusion::couple_latents`]).
    fn couples_internally(&self) -> bool;

    /// `ε̂(z, s)` for a single, uncoupled replica.
    fn predict(&self, z: &[f64], s: usize) -> Result<Vec<f64>>;

    /// `ε̂(z, s)` together with the internal states that [`ScoreBackend::predict_pair`]
    /// would capture for this replica (unscaled, one flattened vector per layer).
    fn predict_with_states(&self, z: &[f64], s: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        Ok((self.predict(z, s)?, vec![z.to_vec()]))
    }

    fn predict_pair(&self, za: &[f64], zb: &[f64], s: usize, _g: f64, capture: bool) -> Result<PairPrediction> {
        let captures = if capture { vec![scaled_difference(za, zb)] } else { Vec::new() };
        Ok(PairPrediction { eps_a: self.predict(za, s)?, eps_b: self.predict(zb, s)?, captures })
    }
}

pub fn scaled_difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y) * FRAC_1_SQRT_2).collect()
}

/// Exact noise predictor of a mixture data distribution pushed through the
/// forward process: `ε̂ = −σ_s ∇log p_s`.
#[derive(Debug, Clone)]
pub struct AnalyticBackend {
    sched: NoiseSchedule,
    marginals: Vec<GaussianMixture>,
}

impl AnalyticBackend {
    pub fn new(data: &GaussianMixture, sched: &NoiseSchedule) -> Result<Self> {
        let marginals = (0..=sched.steps()).map(|s| data.forward(sched.alpha_bar(s))).collect::<Result<Vec<_>>>()?;
        Ok(Self { sched: sched.clone(), marginals })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn marginal(&self, s: usize) -> Result<&GaussianMixture> {
        self.marginals.get(s).ok_or(Error::Bounds { index: s, max: self.sched.steps() })
    }

    pub fn score(&self, z: &[f64], s: usize) -> Result<Vec<f64>> {
        self.marginal(s)?.score(z)
    }
}

impl ScoreBackend for AnalyticBackend {
    fn latent_dim(&self) -> usize {
        self.marginals[0].dim()
    }

    fn capture_layers(&self) -> usize {
        1
    }

    fn couples_internally(&self) -> bool {
        false
    }

    fn predict(&self, z: &[f64], s: usize) -> Result<Vec<f64>> {
        let score = self.score(z, s)?;
        let sigma = self.sched.sigma(s);
        Ok(score.into_iter().map(|x| -sigma * x).collect())
    }
}
