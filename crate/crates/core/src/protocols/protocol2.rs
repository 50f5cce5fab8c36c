//! Protocol II: layerwise energies of fixed principal difference modes along a
//! coupled deterministic trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{couple_latents, ddim_step, scaled_difference, NoiseSchedule, ReplicaPair, ScoreBackend};
use crate::error::{Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::{dot, mean, Matrix};
use crate::output::{fmt_float, fmt_opt, Table};
use crate::protocols::basis::{build_mode_basis, ModeBasis};
use crate::protocols::trajectory::seed_pair;

const RUN_TAG: u64 = 0x9202;

/// Inclusive 1-based range of mode indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub first: usize,
    pub last: usize,
}

impl Band {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    /// 0-based indices.
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first - 1..self.last
    }

    fn overlaps(&self, other: &Band) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolIIConfig {
    pub g: f64,
    /// Reverse step (0 = pure noise) at which the bands are compared.
    pub tau: usize,
    /// Capture layers to analyse; empty means all.
    pub layers: Vec<usize>,
    pub seeds: usize,
    pub sigma: f64,
    /// Number of modes `K` in the fixed basis.
    pub modes: usize,
    pub lead: Band,
    pub trail: Band,
    pub dt_c: f64,
    pub rng_seed: u64,
}

impl Default for ProtocolIIConfig {
    fn default() -> Self {
        Self {
            g: 0.0,
            tau: 50,
            layers: Vec::new(),
            seeds: 32,
            sigma: 1.0,
            modes: 16,
            lead: Band::new(1, 4),
            trail: Band::new(13, 16),
            dt_c: 0.2,
            rng_seed: 0,
        }
    }
}

impl ProtocolIIConfig {
    pub fn validate(&self, steps: usize, capture_layers: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.g) {
            return Err(Error::Domain(format!("g must lie in [0, 1], got {}", self.g)));
        }
        if self.tau >= steps {
            return Err(Error::Config(format!("tau {} must be below the step count {steps}", self.tau)));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= capture_layers) {
            return Err(Error::Config(format!("layer {l} out of range for {capture_layers} capture layers")));
        }
        for b in [self.lead, self.trail] {
            if b.first == 0 || b.first > b.last || b.last > self.modes {
                return Err(Error::Config(format!("band {b:?} outside modes 1..={}", self.modes)));
            }
        }
        if self.lead.overlaps(&self.trail) {
            return Err(Error::Config("lead and trail bands overlap".into()));
        }
        if self.seeds < self.modes.max(2) {
            return Err(Error::Config(format!("{} seeds cannot resolve {} modes", self.seeds, self.modes)));
        }
        if !(self.sigma >= 0.0) || !(self.dt_c > 0.0) {
            return Err(Error::Config(format!("invalid sigma/dt_c ({}, {})", self.sigma, self.dt_c)));
        }
        Ok(())
    }

    fn layer_list(&self, capture_layers: usize) -> Vec<usize> {
        if self.layers.is_empty() {
            (0..capture_layers).collect()
        } else {
            self.layers.clone()
        }
    }
}

/// How the two replicas are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Evaluation {
    /// One joint forward pass with replica coupling `g`.
    Joint,
    /// Two single-replica passes, never coupled.
    Independent,
}

struct Step {
    eps_a: Vec<f64>,
    eps_b: Vec<f64>,
    captures: Vec<Vec<f64>>,
}

fn evaluate(backend: &dyn ScoreBackend, pair: &ReplicaPair, s: usize, g: f64, mode: Evaluation) -> Result<Step> {
    match mode {
        Evaluation::Joint => {
            let g_int = if backend.couples_internally() { g } else { 0.0 };
            let p = backend.predict_pair(&pair.za, &pair.zb, s, g_int, true)?;
            Ok(Step { eps_a: p.eps_a, eps_b: p.eps_b, captures: p.captures })
        }
        Evaluation::Independent => {
            let (eps_a, ha) = backend.predict_with_states(&pair.za, s)?;
            let (eps_b, hb) = backend.predict_with_states(&pair.zb, s)?;
            let captures = ha.iter().zip(&hb).map(|(a, b)| scaled_difference(a, b)).collect();
            Ok(Step { eps_a, eps_b, captures })
        }
    }
}

/// Energy statistics of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergies {
    pub basis_eigenvalues: Vec<f64>,
    /// `energies[k][mode]` for reverse steps `k = 0..S`; row 0 is all ones.
    pub energies: Vec<Vec<f64>>,
    pub lead_mean: f64,
    pub trail_mean: f64,
    pub lead_std: f64,
    pub trail_std: f64,
    /// `trail_mean / lead_mean`; `None` if the lead band carries no energy.
    pub gint: Option<f64>,
    /// Standard deviation over seeds of the per-seed gap ratio.
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub layer: usize,
    pub energies: Option<LayerEnergies>,
    /// Why the layer has no energies (e.g. too few usable modes).
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolIIRun {
    pub g: f64,
    pub tau: usize,
    pub seeds: usize,
    pub layers: Vec<LayerResult>,
}

impl ProtocolIIRun {
    pub fn layer(&self, layer: usize) -> Option<&LayerResult> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Energies and band statistics from per-seed projections
/// `proj[seed][k][mode] = v_k^seed · r_mode`.
fn analyse(basis: &ModeBasis, proj: &[Vec<Vec<f64>>], cfg: &ProtocolIIConfig) -> LayerEnergies {
    let m = proj.len() as f64;
    let steps = proj[0].len();
    let modes = basis.modes();
    let sq = |seed: usize, k: usize, mode: usize| proj[seed][k][mode] * proj[seed][k][mode];
    let e0: Vec<f64> = (0..modes).map(|j| (0..proj.len()).map(|i| sq(i, 0, j)).sum()).collect();
    let energies: Vec<Vec<f64>> = (0..steps)
        .map(|k| (0..modes).map(|j| (0..proj.len()).map(|i| sq(i, k, j)).sum::<f64>() / e0[j]).collect())
        .collect();
    // per-seed contributions average to the energies above
    let band = |seed: usize, b: Band| {
        let idx = b.indices();
        let n = idx.len() as f64;
        idx.map(|j| m * sq(seed, cfg.tau, j) / e0[j]).sum::<f64>() / n
    };
    let lead: Vec<f64> = (0..proj.len()).map(|i| band(i, cfg.lead)).collect();
    let trail: Vec<f64> = (0..proj.len()).map(|i| band(i, cfg.trail)).collect();
    let band_mean = |b: Band| b.indices().map(|j| energies[cfg.tau][j]).sum::<f64>() / b.indices().len() as f64;
    let (lead_mean, trail_mean) = (band_mean(cfg.lead), band_mean(cfg.trail));
    let ratios: Vec<f64> = lead.iter().zip(&trail).filter(|(l, _)| **l > 0.0).map(|(l, t)| t / l).collect();
    LayerEnergies {
        basis_eigenvalues: basis.eigenvalues.clone(),
        energies,
        lead_mean,
        trail_mean,
        lead_std: sample_std(&lead).unwrap_or(0.0),
        trail_std: sample_std(&trail).unwrap_or(0.0),
        gint: (lead_mean > 0.0).then(|| trail_mean / lead_mean),
        spread: sample_std(&ratios),
    }
}

fn run(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    cfg: &ProtocolIIConfig,
    mode: Evaluation,
) -> Result<ProtocolIIRun> {
    let steps = sched.steps();
    cfg.validate(steps, backend.capture_layers())?;
    let layers = cfg.layer_list(backend.capture_layers());
    let master = derive_seed(cfg.rng_seed, &[RUN_TAG]);
    let dim = backend.latent_dim();
    let init = |seed: usize| seed_pair(master, 0, seed, dim, cfg.sigma);

    // stage 1: bases from the step-0 differences
    let first: Vec<Vec<Vec<f64>>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| Ok(evaluate(backend, &init(i), steps, cfg.g, mode)?.captures))
        .collect::<Result<_>>()?;
    let bases: Vec<std::result::Result<ModeBasis, String>> = layers
        .iter()
        .map(|&l| {
            let rows: Vec<Vec<f64>> = first.iter().map(|c| c[l].clone()).collect();
            let v0 = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
            build_mode_basis(&v0, cfg.modes, l).map_err(|e| e.to_string())
        })
        .collect();

    // stage 2: trajectories, projecting captures onto the fixed bases as they arrive
    let proj: Vec<Vec<Vec<Vec<f64>>>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let mut pair = init(i);
            let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); layers.len()];
            for k in 0..steps {
                let s = steps - k;
                let step = evaluate(backend, &pair, s, cfg.g, mode)?;
                for (slot, (&l, basis)) in layers.iter().zip(&bases).enumerate() {
                    if let Ok(b) = basis {
                        out[slot].push(b.vectors.iter().map(|r| dot(&step.captures[l], r)).collect());
                    }
                }
                if k + 1 < steps {
                    pair = ReplicaPair {
                        za: ddim_step(&pair.za, s, sched, &step.eps_a, 0.0, &[])?,
                        zb: ddim_step(&pair.zb, s, sched, &step.eps_b, 0.0, &[])?,
                    };
                    if mode == Evaluation::Joint && !backend.couples_internally() {
                        couple_latents(&mut pair, cfg.g, cfg.dt_c);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let results = layers
        .iter()
        .zip(&bases)
        .enumerate()
        .map(|(slot, (&layer, basis))| match basis {
            Ok(b) => {
                let per_seed: Vec<Vec<Vec<f64>>> = proj.iter().map(|p| p[slot].clone()).collect();
                LayerResult { layer, energies: Some(analyse(b, &per_seed, cfg)), flag: None }
            }
            Err(e) => LayerResult { layer, energies: None, flag: Some(e.clone()) },
        })
        .collect();
    Ok(ProtocolIIRun { g: cfg.g, tau: cfg.tau, seeds: cfg.seeds, layers: results })
}

/// Runs the pair jointly at constant coupling `g` with the deterministic
/// sampler, capturing every layer difference at every step.
pub fn run_protocol2(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    cfg: &ProtocolIIConfig,
) -> Result<ProtocolIIRun> {
    run(backend, sched, cfg, Evaluation::Joint)
}

/// The same measurement with the replicas evolved by separate single-replica
/// passes and only differenced afterwards. `cfg.g` is ignored; this is the
/// reference that a joint run at `g = 0` must reproduce.
pub fn run_protocol2_independent(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    cfg: &ProtocolIIConfig,
) -> Result<ProtocolIIRun> {
    run(backend, sched, cfg, Evaluation::Independent)
}

pub const PROTOCOL2_HEADER: [&str; 5] = ["g", "layer", "step", "mode", "energy"];
pub const PROTOCOL2_SUMMARY_HEADER: [&str; 6] = ["g", "layer", "lead_mean", "trail_mean", "gint", "spread"];

/// Mode indices are written 1-based.
pub fn protocol2_table(runs: &[ProtocolIIRun]) -> Result<Table> {
    let mut t = Table::new(&PROTOCOL2_HEADER);
    for run in runs {
        for l in &run.layers {
            let Some(e) = &l.energies else { continue };
            for (step, row) in e.energies.iter().enumerate() {
                for (mode, v) in row.iter().enumerate() {
                    t.push(vec![
                        fmt_float(run.g),
                        l.layer.to_string(),
                        step.to_string(),
                        (mode + 1).to_string(),
                        fmt_float(*v),
                    ])?;
                }
            }
        }
    }
    Ok(t)
}

pub fn protocol2_summary_table(runs: &[ProtocolIIRun]) -> Result<Table> {
    let mut t = Table::new(&PROTOCOL2_SUMMARY_HEADER);
    for run in runs {
        for l in &run.layers {
            let e = l.energies.as_ref();
            t.push(vec![
                fmt_float(run.g),
                l.layer.to_string(),
                fmt_opt(e.map(|e| e.lead_mean)),
                fmt_opt(e.map(|e| e.trail_mean)),
                fmt_opt(e.and_then(|e| e.gint)),
                fmt_opt(e.and_then(|e| e.spread)),
            ])?;
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_vp_schedule, AnalyticBackend, GaussianMixture, PairPrediction};

    /// `ε̂ = c ⊙ z`, so every latent coordinate evolves with its own gain
    /// under deterministic DDIM; captures are the difference scaled by `w`,
    /// which orders the principal modes by coordinate.
    struct Diagonal {
        c: Vec<f64>,
        w: Vec<f64>,
    }

    impl ScoreBackend for Diagonal {
        fn latent_dim(&self) -> usize {
            self.c.len()
        }
        fn capture_layers(&self) -> usize {
            1
        }
        fn couples_internally(&self) -> bool {
            true
        }
        fn predict(&self, z: &[f64], _s: usize) -> Result<Vec<f64>> {
            Ok(z.iter().zip(&self.c).map(|(z, c)| c * z).collect())
        }
        fn predict_with_states(&self, z: &[f64], s: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
            Ok((self.predict(z, s)?, vec![z.iter().zip(&self.w).map(|(z, w)| z * w).collect()]))
        }
        fn predict_pair(&self, za: &[f64], zb: &[f64], s: usize, _g: f64, capture: bool) -> Result<PairPrediction> {
            let weigh = |z: &[f64]| -> Vec<f64> { z.iter().zip(&self.w).map(|(z, w)| z * w).collect() };
            let d = scaled_difference(&weigh(za), &weigh(zb));
            Ok(PairPrediction {
                eps_a: self.predict(za, s)?,
                eps_b: self.predict(zb, s)?,
                captures: if capture { vec![d] } else { vec![] },
            })
        }
    }

    fn diagonal() -> Diagonal {
        // leading (heavily weighted) coordinates are driven hard toward the data
        // manifold, trailing ones are left to expand
        let c = (0..16).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let w = (0..16).map(|i| 3.0_f64.powf(-(i as f64) / 2.0)).collect();
        Diagonal { c, w }
    }

    #[test]
    fn slower_trailing_decay_opens_a_gap() {
        let sched = make_vp_schedule(40, 1e-3, 0.3).unwrap();
        let cfg = ProtocolIIConfig { tau: 30, seeds: 32, rng_seed: 1, ..ProtocolIIConfig::default() };
        let run = run_protocol2(&diagonal(), &sched, &cfg).unwrap();
        let e = run.layers[0].energies.as_ref().unwrap();
        assert!(e.energies[0].iter().all(|&x| x == 1.0));
        assert_eq!(e.energies.len(), 40);
        assert!(e.gint.unwrap() > 1.0, "{:?}", e.gint);
        assert!(e.spread.unwrap() >= 0.0);
        let ind = run_protocol2_independent(&diagonal(), &sched, &cfg).unwrap();
        assert_eq!(ind, run);
    }

    #[test]
    fn identical_replicas_are_flagged() {
        let sched = make_vp_schedule(20, 1e-3, 0.3).unwrap();
        let mix = GaussianMixture::diagonal(vec![1.0; 16], &[0.5; 16]).unwrap();
        let be = AnalyticBackend::new(&mix, &sched).unwrap();
        let cfg = ProtocolIIConfig { sigma: 0.0, tau: 5, ..ProtocolIIConfig::default() };
        let run = run_protocol2(&be, &sched, &cfg).unwrap();
        assert!(run.layers[0].energies.is_none());
        assert!(run.layers[0].flag.as_ref().unwrap().contains("usable"));
        let summary = protocol2_summary_table(std::slice::from_ref(&run)).unwrap();
        assert_eq!(summary.rows()[0][4], "");
        assert_eq!(protocol2_table(&[run]).unwrap().rows().len(), 0);
    }

    #[test]
    fn coupling_is_applied_to_latent_backends() {
        let sched = make_vp_schedule(20, 1e-3, 0.3).unwrap();
        let mix = GaussianMixture::diagonal(vec![1.0; 16], &[0.5; 16]).unwrap();
        let be = AnalyticBackend::new(&mix, &sched).unwrap();
        let cfg = |g| ProtocolIIConfig {
            g,
            tau: 10,
            seeds: 16,
            modes: 8,
            lead: Band::new(1, 2),
            trail: Band::new(7, 8),
            ..ProtocolIIConfig::default()
        };
        let free = run_protocol2(&be, &sched, &cfg(0.0)).unwrap();
        let tied = run_protocol2(&be, &sched, &cfg(1.0)).unwrap();
        let total = |r: &ProtocolIIRun| r.layers[0].energies.as_ref().unwrap().energies[10].iter().sum::<f64>();
        assert!(total(&tied) < 0.5 * total(&free));
        let t = protocol2_table(&[free]).unwrap();
        assert_eq!(t.rows().len(), 20 * 8);
        assert_eq!(t.rows()[0][3], "1");
    }

    #[test]
    fn config_errors() {
        let sched = make_vp_schedule(20, 1e-3, 0.3).unwrap();
        let be = diagonal();
        let base = ProtocolIIConfig { tau: 5, ..ProtocolIIConfig::default() };
        let bad = [
            ProtocolIIConfig { tau: 20, ..base.clone() },
            ProtocolIIConfig { trail: Band::new(4, 8), ..base.clone() },
            ProtocolIIConfig { lead: Band::new(0, 2), ..base.clone() },
            ProtocolIIConfig { layers: vec![1], ..base.clone() },
            ProtocolIIConfig { seeds: 8, ..base.clone() },
        ];
        for cfg in bad {
            assert!(run_protocol2(&be, &sched, &cfg).is_err(), "{cfg:?}");
        }
        // more modes than the latent can carry: flagged, not fatal
        let wide = ProtocolIIConfig { modes: 20, trail: Band::new(17, 20), seeds: 24, ..base };
        let run = run_protocol2(&be, &sched, &wide).unwrap();
        assert!(run.layers[0].flag.is_some());
    }
}
