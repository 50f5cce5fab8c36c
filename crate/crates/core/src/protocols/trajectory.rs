//! One reverse step of a replica pair, shared by both protocols.

use crate::diffusion::{couple_latents, ddim_step, init_from_draws, NoiseSchedule, ReplicaPair, ScoreBackend};
use crate::error::Result;
use crate::numerics::rng::{gaussian_vec, rng_for};

/// Stream tags under the master seed.
pub(crate) const INIT_TAG: u64 = 0x1417;
pub(crate) const NOISE_TAG: u64 = 0x4015;
pub(crate) const BASELINE_TAG: u64 = 0xba5e;

/// Initial pair for `seed`: `(z_T ± σδ)/√(1+σ²)`.
pub(crate) fn seed_pair(master: u64, tag: u64, seed: usize, dim: usize, sigma: f64) -> ReplicaPair {
    let mut rng = rng_for(master, &[tag, INIT_TAG, seed as u64]);
    let z_t = gaussian_vec(&mut rng, dim);
    let delta = gaussian_vec(&mut rng, dim);
    init_from_draws(&z_t, &delta, sigma)
}

/// Sampler noise for every step of one replica, `noise[k]` used at reverse step `k`.
pub(crate) fn seed_noise(master: u64, tag: u64, seed: usize, replica: u64, steps: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(master, &[tag, NOISE_TAG, seed as u64, replica]);
    (0..steps).map(|_| gaussian_vec(&mut rng, dim)).collect()
}

/// Reverse step `k` (from `s = S − k` to `s − 1`) at coupling `g`. Backends
/// that couple internally see `g` in their forward pass; others have their
/// latents pulled together after the update.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_step(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    pair: &ReplicaPair,
    k: usize,
    g: f64,
    eta: f64,
    dt_c: f64,
    noise: (&[f64], &[f64]),
) -> Result<ReplicaPair> {
    let s = sched.steps() - k;
    let internal = backend.couples_internally();
    let pred = backend.predict_pair(&pair.za, &pair.zb, s, if internal { g } else { 0.0 }, false)?;
    let mut next = ReplicaPair {
        za: ddim_step(&pair.za, s, sched, &pred.eps_a, eta, noise.0)?,
        zb: ddim_step(&pair.zb, s, sched, &pred.eps_b, eta, noise.1)?,
    };
    if !internal {
        couple_latents(&mut next, g, dt_c);
    }
    Ok(next)
}
