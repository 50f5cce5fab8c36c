use serde::{Deserialize, Serialize};

use crate::dit::{head_projections, logits, DitModel};
use crate::error::{Error, Result};
use crate::linear_response::identities::{
    check_projector_identities, effective_attention_width, routing_dominance_bound, ProjectorReport,
};
use crate::linear_response::{
    base_state, build_propagator, measure_attention_difference, residual_scaling, Perturbation,
};
use crate::numerics::rng::{gaussian_matrix, gaussian_stream, gaussian_vec, rng_for};
use crate::numerics::{median, softmax_rows, Matrix};

/// Knobs of [`verify_linear_response`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub layers: Vec<usize>,
    /// Random symmetric base states per layer.
    pub states: usize,
    /// Reverse step used for conditioning.
    pub step: usize,
    pub g_grid: Vec<f64>,
    pub slope_scales: Vec<f64>,
    pub prefactor_scale: f64,
    pub identity_trials: usize,
    pub bound_instances: usize,
    /// Also build the dense propagator of each layer (one state).
    pub propagator: bool,
    pub fd_eps: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            layers: vec![0],
            states: 5,
            step: 50,
            g_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            slope_scales: vec![1e-1, 1e-2, 1e-3, 1e-4],
            prefactor_scale: 1e-5,
            identity_trials: 100,
            bound_instances: 1000,
            propagator: true,
            fd_eps: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefactorRow {
    pub g: f64,
    pub rho: f64,
    pub xi: f64,
    pub routing: f64,
    pub pattern: f64,
    /// Worst `|fit − ρ|` over states, relative to `max(ρ, 1e-2)`.
    pub routing_rel_err: f64,
    pub pattern_rel_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub g: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSummary {
    pub dim: usize,
    pub component_sum_err: f64,
    pub j_mlp_offblock_max: f64,
    pub j_mlp_norm: f64,
    pub attention_norm: f64,
    pub cross_term_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub prefactors: Vec<PrefactorRow>,
    pub residual_slopes: Vec<SlopeRow>,
    /// One report per (state, head) kernel; all must pass.
    pub identities_passed: usize,
    pub identities_total: usize,
    pub first_identity_failure: Option<ProjectorReport>,
    pub n_eff_min: f64,
    pub n_eff_max: f64,
    pub propagator: Option<PropagatorSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundStats {
    pub instances: usize,
    pub in_regime: usize,
    pub violations: usize,
    pub slack_min: f64,
    pub slack_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearResponseReport {
    pub config: VerifyConfig,
    pub layers: Vec<LayerReport>,
    pub bound: BoundStats,
}

/// Random instance in the coherent regime: diffuse attention, value fields
/// dominated by a constant token component, small logit perturbation.
pub fn coherent_bound_instance(seed: u64, index: u64, n: usize, d: usize) -> (Matrix, Matrix, Matrix, Matrix) {
    let mut rng = rng_for(seed, &[0xb0, index]);
    let a0 = softmax_rows(&gaussian_matrix(&mut rng, n, n).scale(0.3)).expect("finite logits");
    let mut coherent = |noise: f64| {
        let base = gaussian_vec(&mut rng, d);
        let jitter = gaussian_matrix(&mut rng, n, d);
        Matrix::from_fn(n, d, |i, j| base[j] + noise * jitter[(i, j)])
    };
    let v0 = coherent(0.05);
    let dv = coherent(0.05);
    let ds = gaussian_matrix(&mut rng, n, n).scale(0.1);
    (a0, v0, ds, dv)
}

pub fn bound_statistics(instances: usize, n: usize, d: usize, seed: u64) -> Result<BoundStats> {
    let mut slacks = Vec::with_capacity(instances);
    let mut violations = 0;
    for t in 0..instances {
        let (a0, v0, ds, dv) = coherent_bound_instance(seed, t as u64, n, d);
        match routing_dominance_bound(&a0, &v0, &ds, &dv) {
            Ok(b) => {
                violations += usize::from(!b.holds);
                slacks.push(b.slack());
            }
            Err(Error::OutOfRegime(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(BoundStats {
        instances,
        in_regime: slacks.len(),
        violations,
        slack_min: slacks.iter().copied().fold(f64::INFINITY, f64::min),
        slack_median: if slacks.is_empty() { f64::NAN } else { median(&slacks) },
    })
}

fn unit_direction(seed: u64, path: &[u64], rows: usize, cols: usize) -> Matrix {
    let m = gaussian_matrix(&mut rng_for(seed, path), rows, cols);
    m.scale(1.0 / m.frobenius_norm())
}

fn verify_layer(model: &DitModel, layer: usize, cfg: &VerifyConfig) -> Result<LayerReport> {
    let (n, d) = (model.config.tokens(), model.config.d_model);
    let states = (0..cfg.states)
        .map(|k| {
            base_state(
                model,
                &gaussian_stream(cfg.seed, &[layer as u64, k as u64, 1], model.config.latent_dim()),
                cfg.step,
                layer,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let dirs: Vec<Matrix> =
        (0..cfg.states).map(|k| unit_direction(cfg.seed, &[layer as u64, k as u64, 2], n, d)).collect();

    let mut prefactors = Vec::with_capacity(cfg.g_grid.len());
    let mut residual_slopes = Vec::with_capacity(cfg.g_grid.len());
    for &g in &cfg.g_grid {
        let mut row = PrefactorRow {
            g,
            rho: 0.0,
            xi: 0.0,
            routing: 0.0,
            pattern: 0.0,
            routing_rel_err: 0.0,
            pattern_rel_err: 0.0,
        };
        let mut slopes = Vec::with_capacity(states.len());
        for (h0, dir) in states.iter().zip(&dirs) {
            let p = Perturbation::new(dir.clone(), cfg.prefactor_scale)?;
            let dec = measure_attention_difference(model, layer, cfg.step, h0, &p, g)?;
            let fit = dec.fit_prefactors()?;
            let re = (fit.routing - dec.rho).abs() / dec.rho.max(1e-2);
            let pe = (fit.pattern - dec.xi).abs() / dec.xi;
            if re >= row.routing_rel_err {
                row.routing = fit.routing;
            }
            if pe >= row.pattern_rel_err {
                row.pattern = fit.pattern;
            }
            row = PrefactorRow {
                rho: dec.rho,
                xi: dec.xi,
                routing_rel_err: row.routing_rel_err.max(re),
                pattern_rel_err: row.pattern_rel_err.max(pe),
                ..row
            };
            slopes.push(residual_scaling(model, layer, cfg.step, h0, dir, g, &cfg.slope_scales)?.slope);
        }
        prefactors.push(row);
        residual_slopes.push(SlopeRow {
            g,
            min: slopes.iter().copied().fold(f64::INFINITY, f64::min),
            median: median(&slopes),
            max: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }

    let m = model.modulation(layer, &model.conditioning(cfg.step))?;
    let (mut passed, mut total, mut first_failure) = (0, 0, None);
    let (mut n_eff_min, mut n_eff_max) = (f64::INFINITY, 0.0f64);
    for (k, h0) in states.iter().enumerate() {
        let x0 = model.attention_input(h0, &m);
        let (q, kk, _) = head_projections(&model.layers[layer].attn, &x0, model.d_h())?;
        for (hd, (qh, kh)) in q.iter().zip(&kk).enumerate() {
            let a0 = softmax_rows(&logits(qh, kh)?)?;
            let rep = check_projector_identities(&a0, cfg.identity_trials, cfg.seed ^ ((k as u64) << 8 | hd as u64))?;
            total += 1;
            if rep.passed() {
                passed += 1;
            } else if first_failure.is_none() {
                first_failure = Some(rep);
            }
            for w in effective_attention_width(&a0)? {
                n_eff_min = n_eff_min.min(w);
                n_eff_max = n_eff_max.max(w);
            }
        }
    }

    let propagator = if cfg.propagator && !states.is_empty() {
        let g = cfg.g_grid.first().copied().unwrap_or(0.5);
        let k = build_propagator(model, layer, cfg.step, &states[0], g, cfg.fd_eps)?;
        Some(PropagatorSummary {
            dim: k.dim(),
            component_sum_err: k.k_g.sub(&k.component_sum())?.max_abs(),
            j_mlp_offblock_max: k.j_mlp_offblock_max(),
            j_mlp_norm: k.j_mlp.frobenius_norm(),
            attention_norm: k.attention_part().frobenius_norm(),
            cross_term_norm: k.cross_term_norm,
        })
    } else {
        None
    };

    Ok(LayerReport {
        layer,
        prefactors,
        residual_slopes,
        identities_passed: passed,
        identities_total: total,
        first_identity_failure: first_failure,
        n_eff_min,
        n_eff_max,
        propagator,
    })
}

/// Runs every linear-response check on `model` and collects the numbers.
pub fn verify_linear_response(model: &DitModel, cfg: &VerifyConfig) -> Result<LinearResponseReport> {
    if cfg.states == 0 || cfg.g_grid.is_empty() {
        return Err(Error::Config("verification needs at least one state and one coupling".into()));
    }
    if let Some(&l) = cfg.layers.iter().find(|&&l| l >= model.config.layers) {
        return Err(Error::Bounds { index: l, max: model.config.layers - 1 });
    }
    let layers = cfg.layers.iter().map(|&l| verify_layer(model, l, cfg)).collect::<Result<Vec<_>>>()?;
    let bound = bound_statistics(cfg.bound_instances, model.config.tokens(), model.config.d_h, cfg.seed)?;
    Ok(LinearResponseReport { config: cfg.clone(), layers, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dit::DitConfig;

    #[test]
    fn small_report() {
        let model = DitModel::random(DitConfig { rng_seed: 3, ..DitConfig::default() }.with_layers(2)).unwrap();
        let cfg = VerifyConfig {
            layers: vec![1],
            states: 2,
            g_grid: vec![0.0, 1.0],
            identity_trials: 5,
            bound_instances: 50,
            propagator: false,
            ..VerifyConfig::default()
        };
        let r = verify_linear_response(&model, &cfg).unwrap();
        let l = &r.layers[0];
        assert_eq!(l.identities_passed, l.identities_total);
        assert!(
            l.prefactors.iter().all(|p| p.routing_rel_err < 1e-6 && p.pattern_rel_err < 1e-6),
            "{:?}",
            l.prefactors
        );
        assert_eq!(r.bound.violations, 0);
        assert!(l.n_eff_min >= 1.0 && l.n_eff_max <= 16.0 + 1e-9);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("residual_slopes"));
    }
}
