use serde::{Deserialize, Serialize};

use crate::diffusion::{AnalyticBackend, GaussianMixture, NoiseSchedule, ScoreBackend};
use crate::dit::patch::patchify;
use crate::dit::DitModel;
use crate::error::{Error, Result};
use crate::numerics::rng::{gaussian_vec, rng_for};
use crate::numerics::{ridge_fit, Matrix};
use rand::Rng;

/// Regression design for the decoder: one row per (sample, token).
#[derive(Debug, Clone)]
pub struct CalibrationData {
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub x_test: Matrix,
    pub y_test: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_train: usize,
    pub n_test: usize,
    pub ridge: f64,
    pub condition: f64,
    pub r2_train: f64,
    /// Held-out coefficient of determination.
    pub r2_test: f64,
}

/// Samples `(z_s, ε*)` pairs with `z_s = α_s x₀ + σ_s ε`, `x₀` from `mixture`, a
/// uniformly random step `s ∈ 1..=S`, and the analytic target `ε* = −σ_s ∇log p_s(z_s)`,
/// then runs the frozen network to get decoder features.
pub fn calibration_data(
    model: &DitModel,
    sched: &NoiseSchedule,
    mixture: &GaussianMixture,
    n_samples: usize,
    rng_seed: u64,
) -> Result<CalibrationData> {
    let cfg = &model.config;
    if mixture.dim() != cfg.latent_dim() {
        return Err(Error::Dimension(format!(
            "mixture dimension {} for a {}-d latent",
            mixture.dim(),
            cfg.latent_dim()
        )));
    }
    if n_samples < 10 * cfg.d_model {
        return Err(Error::Config(format!("need at least {} calibration samples, got {n_samples}", 10 * cfg.d_model)));
    }
    let oracle = AnalyticBackend::new(mixture, sched)?;
    let n_test = (n_samples / 4).max(1);
    let build = |count: usize, stream: u64| -> Result<(Matrix, Matrix)> {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for i in 0..count {
            let mut rng = rng_for(rng_seed, &[stream, i as u64]);
            let s = rng.random_range(1..=sched.steps());
            let (x0, _) = mixture.sample(&mut rng);
            let noise = gaussian_vec(&mut rng, x0.len());
            let z: Vec<f64> = x0.iter().zip(&noise).map(|(x, e)| sched.alpha(s) * x + sched.sigma(s) * e).collect();
            let target = oracle.predict(&z, s)?;
            let (states, cond) = model.hidden_single(&z, s)?;
            xs.push(model.features(states.last().expect("at least one layer"), &cond)?);
            ys.push(patchify(&target, cfg)?);
        }
        Ok((stack(&xs)?, stack(&ys)?))
    };
    let (x_train, y_train) = build(n_samples, 0)?;
    let (x_test, y_test) = build(n_test, 1)?;
    Ok(CalibrationData { x_train, y_train, x_test, y_test })
}

fn stack(blocks: &[Matrix]) -> Result<Matrix> {
    let cols = blocks.first().map_or(0, Matrix::cols);
    let data: Vec<f64> = blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
    Matrix::new(data.len() / cols.max(1), cols, data)
}

/// Coefficient of determination pooled over all output columns.
pub fn r_squared(pred: &Matrix, target: &Matrix) -> f64 {
    let (n, q) = target.shape();
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for j in 0..q {
        let mean = (0..n).map(|i| target[(i, j)]).sum::<f64>() / n as f64;
        for i in 0..n {
            ss_res += (target[(i, j)] - pred[(i, j)]).powi(2);
            ss_tot += (target[(i, j)] - mean).powi(2);
        }
    }
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Ridge fit of the decoder on prepared data.
pub fn fit_decoder(data: &CalibrationData, ridge: f64) -> Result<(Matrix, CalibrationReport)> {
    let fit = ridge_fit(&data.x_train, &data.y_train, ridge)?;
    let r2_train = r_squared(&data.x_train.matmul(&fit.weights)?, &data.y_train);
    let r2_test = r_squared(&data.x_test.matmul(&fit.weights)?, &data.y_test);
    let report = CalibrationReport {
        n_train: data.x_train.rows(),
        n_test: data.x_test.rows(),
        ridge,
        condition: fit.condition,
        r2_train,
        r2_test,
    };
    Ok((fit.weights, report))
}

/// Fits the decoder of `model` so the network approximates the mixture's
/// noise predictor. Everything except the decoder stays frozen.
pub fn calibrate_decoder(
    model: &DitModel,
    sched: &NoiseSchedule,
    mixture: &GaussianMixture,
    n_samples: usize,
    ridge: f64,
    rng_seed: u64,
) -> Result<(DitModel, CalibrationReport)> {
    let data = calibration_data(model, sched, mixture, n_samples, rng_seed)?;
    let (decoder, report) = fit_decoder(&data, ridge)?;
    let mut calibrated = model.clone();
    calibrated.decoder = decoder;
    Ok((calibrated, report))
}
