//! Protocol I: couple a pair up to an intervention step, release it, and
//! measure how much the final outputs still agree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, ReplicaPair, ScoreBackend};
use crate::error::{Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::{bootstrap_ci, fit_logistic, median, welch_t_test, LogisticFit, WelchTest};
use crate::output::{fmt_float, fmt_opt, Table};
use crate::protocols::features::{feature_agreement, scale_decomposition, FeatureMap, Upsample};
use crate::protocols::trajectory::{pair_step, seed_noise, seed_pair, BASELINE_TAG};

pub const MIN_SEEDS: usize = 8;
const RUN_TAG: u64 = 0x9101;
const BOOT_TAG: u64 = 0xb0b0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolIConfig {
    pub g: f64,
    /// Intervention steps; empty means `0..=S` every `t_int_step`.
    pub t_int: Vec<usize>,
    pub t_int_step: usize,
    pub seeds: usize,
    pub sigma: f64,
    /// DDIM stochasticity of the sampler.
    pub eta: f64,
    /// Coupling time per step for backends that couple in latent space.
    pub dt_c: f64,
    pub pool: usize,
    pub upsample: Upsample,
    /// Drive both replicas with the same sampler noise.
    pub shared_noise: bool,
    pub bootstrap: usize,
    pub level: f64,
    pub rng_seed: u64,
}

impl Default for ProtocolIConfig {
    fn default() -> Self {
        Self {
            g: 0.5,
            t_int: Vec::new(),
            t_int_step: 4,
            seeds: 32,
            sigma: 1.0,
            eta: 1.0,
            dt_c: 0.2,
            pool: 2,
            upsample: Upsample::Bilinear,
            shared_noise: false,
            bootstrap: 200,
            level: 0.95,
            rng_seed: 0,
        }
    }
}

impl ProtocolIConfig {
    pub fn grid(&self, steps: usize) -> Vec<usize> {
        if self.t_int.is_empty() {
            (0..=steps).step_by(self.t_int_step.max(1)).collect()
        } else {
            self.t_int.clone()
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.g) {
            return Err(Error::Domain(format!("g must lie in [0, 1], got {}", self.g)));
        }
        if self.seeds < MIN_SEEDS {
            return Err(Error::Config(format!("Protocol I needs at least {MIN_SEEDS} seeds, got {}", self.seeds)));
        }
        if self.t_int.is_empty() && self.t_int_step == 0 {
            return Err(Error::Config("t_int_step must be positive".into()));
        }
        let grid = self.grid(steps);
        if let Some(&t) = grid.iter().find(|&&t| t > steps) {
            return Err(Error::Config(format!("t_int {t} exceeds the step count {steps}")));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("t_int grid must be strictly increasing".into()));
        }
        if !(self.sigma >= 0.0) || !(self.dt_c > 0.0) || !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("invalid sigma/dt_c/eta ({}, {}, {})", self.sigma, self.dt_c, self.eta)));
        }
        Ok(())
    }
}

/// Final-output comparison of one seed at one intervention step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolIRecord {
    pub t_int: usize,
    pub seed: usize,
    /// `None` when a feature vector vanished.
    pub a_feat: Option<f64>,
    pub d_low: f64,
    pub d_high: f64,
}

/// Logistic fit of one median curve, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub fit: Option<LogisticFit>,
    pub error: Option<String>,
}

impl CurveFit {
    pub fn tau(&self) -> Option<f64> {
        self.fit.map(|f| f.tau)
    }

    fn from_result(r: Result<LogisticFit>) -> Self {
        match r {
            Ok(f) => Self { fit: Some(f), error: None },
            Err(e) => Self { fit: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolIRun {
    pub g: f64,
    pub seeds: usize,
    pub t_int: Vec<usize>,
    /// Ordered by intervention step, then seed.
    pub records: Vec<ProtocolIRecord>,
    /// Median over seeds at each intervention step.
    pub a_feat: Vec<Option<f64>>,
    pub d_low: Vec<f64>,
    pub d_high: Vec<f64>,
    pub tau_spec: CurveFit,
    pub tau_g: CurveFit,
    pub tau_l: CurveFit,
    pub delta_tau: Option<f64>,
    /// Seed-bootstrap interval of `τ_spec`.
    pub ci: Option<(f64, f64)>,
    pub ci_error: Option<String>,
    /// Per-seed agreement of independent pairs run uncoupled.
    pub baseline: Vec<Option<f64>>,
    pub baseline_median: Option<f64>,
    /// Welch test of the `t_int = 0` agreements against the baseline.
    pub baseline_test: Option<WelchTest>,
}

fn compare(pair: &ReplicaPair, phi: &FeatureMap, cfg: &ProtocolIConfig) -> Result<(Option<f64>, f64, f64)> {
    let a = feature_agreement(&pair.za, &pair.zb, phi)?;
    let (lo, hi) = scale_decomposition(&pair.za, &pair.zb, phi.shape, cfg.pool, cfg.upsample)?;
    Ok((a, lo, hi))
}

/// All intervention steps of one seed. The coupled prefix is shared: the
/// state before step `t` is snapshotted, then released with `g = 0`.
fn run_seed(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    phi: &FeatureMap,
    cfg: &ProtocolIConfig,
    grid: &[usize],
    seed: usize,
) -> Result<Vec<(Option<f64>, f64, f64)>> {
    let (steps, dim) = (sched.steps(), backend.latent_dim());
    let master = derive_seed(cfg.rng_seed, &[RUN_TAG]);
    let noise_a = seed_noise(master, 0, seed, 0, steps, dim);
    let noise_b = if cfg.shared_noise { noise_a.clone() } else { seed_noise(master, 0, seed, 1, steps, dim) };
    let mut pair = seed_pair(master, 0, seed, dim, cfg.sigma);
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for &t in grid {
        while k < t {
            pair = pair_step(backend, sched, &pair, k, cfg.g, cfg.eta, cfg.dt_c, (&noise_a[k], &noise_b[k]))?;
            k += 1;
        }
        let mut free = pair.clone();
        for j in t..steps {
            free = pair_step(backend, sched, &free, j, 0.0, cfg.eta, cfg.dt_c, (&noise_a[j], &noise_b[j]))?;
        }
        out.push(compare(&free, phi, cfg)?);
    }
    Ok(out)
}

/// Independent pairs (`σ = 1`, never coupled) on a separate seed stream.
fn run_baseline(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    phi: &FeatureMap,
    cfg: &ProtocolIConfig,
) -> Result<Vec<Option<f64>>> {
    let (steps, dim) = (sched.steps(), backend.latent_dim());
    let master = derive_seed(cfg.rng_seed, &[RUN_TAG]);
    (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| {
            let na = seed_noise(master, BASELINE_TAG, seed, 0, steps, dim);
            let nb = seed_noise(master, BASELINE_TAG, seed, 1, steps, dim);
            let mut pair = seed_pair(master, BASELINE_TAG, seed, dim, 1.0);
            for k in 0..steps {
                pair = pair_step(backend, sched, &pair, k, 0.0, cfg.eta, cfg.dt_c, (&na[k], &nb[k]))?;
            }
            Ok(compare(&pair, phi, cfg)?.0)
        })
        .collect()
}

fn defined(values: impl IntoIterator<Item = Option<f64>>) -> Vec<f64> {
    values.into_iter().flatten().collect()
}

fn median_opt(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| median(values))
}

/// Fits a logistic to `y / max|y|` against the intervention step.
pub fn fit_curve(t_int: &[usize], y: &[f64]) -> Result<LogisticFit> {
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateFit("curve is identically zero or non-finite".into()));
    }
    let xs: Vec<f64> = t_int.iter().map(|&t| t as f64).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
    fit_logistic(&xs, &ys)
}

/// Median agreement curve over the given per-seed curves, with steps where
/// no seed is defined dropped.
fn agreement_curve(t_int: &[usize], per_seed: &[&Vec<Option<f64>>]) -> (Vec<usize>, Vec<f64>) {
    t_int
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| median_opt(&defined(per_seed.iter().map(|c| c[i]))).map(|m| (t, m)))
        .unzip()
}

pub fn run_protocol1(
    backend: &dyn ScoreBackend,
    sched: &NoiseSchedule,
    phi: &FeatureMap,
    cfg: &ProtocolIConfig,
) -> Result<ProtocolIRun> {
    let steps = sched.steps();
    cfg.validate(steps)?;
    if phi.shape.len() != backend.latent_dim() {
        return Err(Error::Dimension(format!(
            "feature map for {} values, backend latent has {}",
            phi.shape.len(),
            backend.latent_dim()
        )));
    }
    let grid = cfg.grid(steps);
    let per_seed: Vec<Vec<(Option<f64>, f64, f64)>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| run_seed(backend, sched, phi, cfg, &grid, seed))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(grid.len() * cfg.seeds);
    for (i, &t) in grid.iter().enumerate() {
        for (seed, rows) in per_seed.iter().enumerate() {
            let (a_feat, d_low, d_high) = rows[i];
            records.push(ProtocolIRecord { t_int: t, seed, a_feat, d_low, d_high });
        }
    }
    let column = |i: usize, f: fn(&(Option<f64>, f64, f64)) -> f64| -> f64 {
        median(&per_seed.iter().map(|r| f(&r[i])).collect::<Vec<_>>())
    };
    let d_low: Vec<f64> = (0..grid.len()).map(|i| column(i, |r| r.1)).collect();
    let d_high: Vec<f64> = (0..grid.len()).map(|i| column(i, |r| r.2)).collect();
    let curves: Vec<Vec<Option<f64>>> = per_seed.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    let a_feat: Vec<Option<f64>> = (0..grid.len()).map(|i| median_opt(&defined(curves.iter().map(|c| c[i])))).collect();

    let refs: Vec<&Vec<Option<f64>>> = curves.iter().collect();
    let (ts, ys) = agreement_curve(&grid, &refs);
    let tau_spec = CurveFit::from_result(fit_curve(&ts, &ys));
    let tau_g = CurveFit::from_result(fit_curve(&grid, &d_low));
    let tau_l = CurveFit::from_result(fit_curve(&grid, &d_high));
    let delta_tau = tau_l.tau().zip(tau_g.tau()).map(|(l, g)| l - g);

    let boot_seed = derive_seed(cfg.rng_seed, &[BOOT_TAG, cfg.g.to_bits()]);
    let statistic = |sample: &[&Vec<Option<f64>>]| {
        let (ts, ys) = agreement_curve(&grid, sample);
        fit_curve(&ts, &ys).map_or(f64::NAN, |f| f.tau)
    };
    let (ci, ci_error) = match bootstrap_ci(&refs, statistic, cfg.bootstrap, cfg.level, boot_seed) {
        Ok(ci) => (Some(ci), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let baseline = run_baseline(backend, sched, phi, cfg)?;
    let base_vals = defined(baseline.iter().copied());
    let baseline_test = grid
        .iter()
        .position(|&t| t == 0)
        .and_then(|i| welch_t_test(&defined(curves.iter().map(|c| c[i])), &base_vals).ok());

    Ok(ProtocolIRun {
        g: cfg.g,
        seeds: cfg.seeds,
        t_int: grid,
        records,
        a_feat,
        d_low,
        d_high,
        tau_spec,
        tau_g,
        tau_l,
        delta_tau,
        ci,
        ci_error,
        baseline_median: median_opt(&base_vals),
        baseline,
        baseline_test,
    })
}

pub const PROTOCOL1_HEADER: [&str; 6] = ["g", "t_int", "seed", "a_feat", "d_low", "d_high"];
pub const PROTOCOL1_FITS_HEADER: [&str; 7] = ["g", "tau_spec", "ci_lo", "ci_hi", "tau_g", "tau_l", "delta_tau"];

pub fn protocol1_table(runs: &[ProtocolIRun]) -> Result<Table> {
    let mut t = Table::new(&PROTOCOL1_HEADER);
    for run in runs {
        for r in &run.records {
            t.push(vec![
                fmt_float(run.g),
                r.t_int.to_string(),
                r.seed.to_string(),
                fmt_opt(r.a_feat),
                fmt_float(r.d_low),
                fmt_float(r.d_high),
            ])?;
        }
    }
    Ok(t)
}

pub fn protocol1_fits_table(runs: &[ProtocolIRun]) -> Result<Table> {
    let mut t = Table::new(&PROTOCOL1_FITS_HEADER);
    for run in runs {
        t.push(vec![
            fmt_float(run.g),
            fmt_opt(run.tau_spec.tau()),
            fmt_opt(run.ci.map(|c| c.0)),
            fmt_opt(run.ci.map(|c| c.1)),
            fmt_opt(run.tau_g.tau()),
            fmt_opt(run.tau_l.tau()),
            fmt_opt(run.delta_tau),
        ])?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_vp_schedule, AnalyticBackend};
    use crate::protocols::{ImagePrior, ImageShape};

    fn setup() -> (AnalyticBackend, NoiseSchedule, FeatureMap) {
        let sched = make_vp_schedule(30, 1e-3, 0.3).unwrap();
        let mix = ImagePrior::default().mixture().unwrap();
        let phi = FeatureMap::new(&mix, ImageShape::square(8), 2).unwrap();
        (AnalyticBackend::new(&mix, &sched).unwrap(), sched, phi)
    }

    fn small(g: f64) -> ProtocolIConfig {
        ProtocolIConfig { g, seeds: 8, t_int_step: 3, bootstrap: 100, rng_seed: 3, ..ProtocolIConfig::default() }
    }

    fn csv(run: &ProtocolIRun) -> (Vec<u8>, Vec<u8>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        protocol1_table(std::slice::from_ref(run)).unwrap().write(&mut a).unwrap();
        protocol1_fits_table(std::slice::from_ref(run)).unwrap().write(&mut b).unwrap();
        (a, b)
    }

    #[test]
    fn run_invariants_and_determinism() {
        let (be, sched, phi) = setup();
        let cfg = small(0.6);
        let run = run_protocol1(&be, &sched, &phi, &cfg).unwrap();
        assert_eq!(run.t_int, (0..=30).step_by(3).collect::<Vec<_>>());
        assert_eq!(run.records.len(), 11 * 8);
        for r in &run.records {
            assert!(r.a_feat.is_some_and(|a| (-1.0..=1.0).contains(&a)));
            assert!(r.d_low >= 0.0 && r.d_high >= 0.0);
        }
        if let (Some(l), Some(g)) = (run.tau_l.tau(), run.tau_g.tau()) {
            assert_eq!(run.delta_tau, Some(l - g));
        }
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let again = single.install(|| run_protocol1(&be, &sched, &phi, &cfg).unwrap());
        assert_eq!(csv(&run), csv(&again));
    }

    #[test]
    fn coupling_raises_final_agreement() {
        let (be, sched, phi) = setup();
        let cfg = ProtocolIConfig { sigma: 0.3, shared_noise: true, ..small(1.0) };
        let run = run_protocol1(&be, &sched, &phi, &cfg).unwrap();
        let curve: Vec<f64> = run.a_feat.iter().map(|a| a.unwrap()).collect();
        let top = curve.iter().cloned().fold(f64::MIN, f64::max);
        assert!(curve.last().unwrap() >= &(top - 1e-3), "{curve:?}");
        assert!(curve.last().unwrap() > &curve[0]);
    }

    #[test]
    fn config_errors() {
        let (be, sched, phi) = setup();
        let bad = [
            ProtocolIConfig { seeds: 7, ..small(0.5) },
            ProtocolIConfig { t_int: vec![0, 40], ..small(0.5) },
            ProtocolIConfig { t_int: vec![4, 2], ..small(0.5) },
            ProtocolIConfig { eta: 2.0, ..small(0.5) },
        ];
        for cfg in bad {
            assert!(run_protocol1(&be, &sched, &phi, &cfg).is_err(), "{cfg:?}");
        }
        assert!(matches!(run_protocol1(&be, &sched, &phi, &small(1.5)), Err(Error::Domain(_))));
    }

    #[test]
    fn fit_failures_are_recorded() {
        let (be, sched, phi) = setup();
        let cfg = ProtocolIConfig { t_int: vec![0, 10, 20], ..small(0.5) };
        let run = run_protocol1(&be, &sched, &phi, &cfg).unwrap();
        assert!(run.tau_spec.fit.is_none() && run.tau_spec.error.is_some());
        assert!(run.ci.is_none() && run.delta_tau.is_none());
        assert_eq!(run.records.len(), 24);
        assert!(fit_curve(&[0, 1, 2, 3, 4, 5], &[0.0; 6]).is_err());
    }
}
