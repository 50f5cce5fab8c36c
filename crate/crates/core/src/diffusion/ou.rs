//! Ensemble sweeps of the coupled SDE with the linear score `−z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{coupled_reverse_step, init_from_draws, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::rng::{gaussian_vec, rng_for};
use crate::output::{fmt_float, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuConfig {
    pub g_grid: Vec<f64>,
    pub trajectories: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Reverse-time step; `None` means `1/S`.
    pub dt: Option<f64>,
    pub rng_seed: u64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            g_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            trajectories: 10_000,
            dim: 4,
            sigma: 1.0,
            dt: None,
            rng_seed: 0,
        }
    }
}

impl OuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.g_grid.is_empty() || self.g_grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config(format!("g grid must be nonempty and nonnegative, got {:?}", self.g_grid)));
        }
        if self.trajectories < 2 || self.dim == 0 {
            return Err(Error::Config("need at least 2 trajectories of positive dimension".into()));
        }
        if !(self.sigma >= 0.0) || self.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(Error::Config(format!("invalid sigma {} or dt {:?}", self.sigma, self.dt)));
        }
        Ok(())
    }
}

/// Ensemble variances per coordinate of `u = (zA+zB)/√2` and `v = (zA−zB)/√2`
/// after `step` reverse steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuRow {
    pub g: f64,
    pub step: usize,
    pub u_var: f64,
    pub v_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuReport {
    pub rows: Vec<OuRow>,
}

impl OuReport {
    pub const CSV_HEADER: [&'static str; 4] = ["g", "step", "u_var", "v_var"];

    /// `v` variance at reverse step `step`, in `g_grid` order.
    pub fn v_variance_at(&self, step: usize) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.step == step).map(|r| (r.g, r.v_var)).collect()
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(&Self::CSV_HEADER);
        for r in &self.rows {
            t.push(vec![fmt_float(r.g), r.step.to_string(), fmt_float(r.u_var), fmt_float(r.v_var)])?;
        }
        Ok(t)
    }
}

fn linear_score(z: &[f64], _s: usize) -> Result<Vec<f64>> {
    Ok(z.iter().map(|x| -x).collect())
}

/// Runs every trajectory at every coupling in the grid with the same
/// initial draws and noise, so differences across `g` are due to coupling alone.
pub fn simulate_ou(sched: &NoiseSchedule, cfg: &OuConfig) -> Result<OuReport> {
    cfg.validate()?;
    let steps = sched.steps();
    let dt = cfg.dt.unwrap_or(1.0 / steps as f64);
    let d = cfg.dim;
    let mut rows = Vec::with_capacity(cfg.g_grid.len() * (steps + 1));
    for &g in &cfg.g_grid {
        // per trajectory: (Σu², Σv², Σu, Σv) at every step
        let per: Vec<Vec<[f64; 4]>> = (0..cfg.trajectories)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(cfg.rng_seed, &[i as u64]);
                let z_t = gaussian_vec(&mut rng, d);
                let delta = gaussian_vec(&mut rng, d);
                let mut pair = init_from_draws(&z_t, &delta, cfg.sigma);
                let mut out = Vec::with_capacity(steps + 1);
                let moments = |p: &crate::diffusion::ReplicaPair| {
                    let (u, v) = p.uv();
                    [u.iter().map(|x| x * x).sum(), v.iter().map(|x| x * x).sum(), u.iter().sum(), v.iter().sum()]
                };
                out.push(moments(&pair));
                for k in 0..steps {
                    let na = gaussian_vec(&mut rng, d);
                    let nb = gaussian_vec(&mut rng, d);
                    pair = coupled_reverse_step(&pair, steps - k, sched, g, linear_score, &na, &nb, -dt)?;
                    out.push(moments(&pair));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let n = (cfg.trajectories * d) as f64;
        for step in 0..=steps {
            let mut acc = [0.0; 4];
            for traj in &per {
                for (a, x) in acc.iter_mut().zip(&traj[step]) {
                    *a += x;
                }
            }
            let var = |sq: f64, s: f64| (sq - s * s / n) / (n - 1.0);
            rows.push(OuRow { g, step, u_var: var(acc[0], acc[2]), v_var: var(acc[1], acc[3]) });
        }
    }
    Ok(OuReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_vp_schedule;

    #[test]
    fn coupling_damps_v_but_not_u() {
        let sched = make_vp_schedule(40, 1e-3, 0.2).unwrap();
        let cfg = OuConfig { trajectories: 500, ..OuConfig::default() };
        let rep = simulate_ou(&sched, &cfg).unwrap();
        let mid = rep.v_variance_at(20);
        assert!(mid.windows(2).all(|w| w[1].1 < w[0].1), "{mid:?}");
        // u never sees the coupling; with shared streams it matches across g up to rounding
        let u: Vec<f64> = rep.rows.iter().filter(|r| r.step == 20).map(|r| r.u_var).collect();
        assert!(u.iter().all(|x| (x - u[0]).abs() < 1e-12 * u[0]), "{u:?}");
        assert_eq!(rep.table().unwrap().rows().len(), 5 * 41);
        assert_eq!(simulate_ou(&sched, &cfg).unwrap(), rep);
    }

    #[test]
    fn rejects_bad_config() {
        let sched = make_vp_schedule(10, 1e-3, 0.2).unwrap();
        for cfg in [
            OuConfig { g_grid: vec![], ..OuConfig::default() },
            OuConfig { g_grid: vec![-0.1], ..OuConfig::default() },
            OuConfig { trajectories: 1, ..OuConfig::default() },
            OuConfig { dt: Some(0.0), ..OuConfig::default() },
        ] {
            assert!(matches!(simulate_ou(&sched, &cfg), Err(Error::Config(_))));
        }
    }
}
