use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{gaussian_vec, rng_for};

/// Paired replica latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPair {
    pub za: Vec<f64>,
    pub zb: Vec<f64>,
}

impl ReplicaPair {
    pub fn new(za: Vec<f64>, zb: Vec<f64>) -> Result<Self> {
        if za.len() != zb.len() {
            return Err(Error::Dimension(format!("replica sizes {} and {} differ", za.len(), zb.len())));
        }
        Ok(Self { za, zb })
    }

    pub fn dim(&self) -> usize {
        self.za.len()
    }

    pub fn swapped(&self) -> Self {
        Self { za: self.zb.clone(), zb: self.za.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.za.iter().chain(&self.zb).all(|x| x.is_finite())
    }

    /// Common mode `u = (zA+zB)/√2` and difference mode `v = (zA−zB)/√2`.
    pub fn uv(&self) -> (Vec<f64>, Vec<f64>) {
        uv_transform(&self.za, &self.zb)
    }

    pub fn from_uv(u: &[f64], v: &[f64]) -> Self {
        let (za, zb) = uv_transform(u, v);
        Self { za, zb }
    }

    pub fn difference(&self) -> Vec<f64> {
        self.uv().1
    }
}

/// `(a+b)/√2, (a−b)/√2`; the map is its own inverse.
pub fn uv_transform(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u = a.iter().zip(b).map(|(x, y)| (x + y) * FRAC_1_SQRT_2).collect();
    let v = a.iter().zip(b).map(|(x, y)| (x - y) * FRAC_1_SQRT_2).collect();
    (u, v)
}

/// Replica initialization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// Antisymmetric perturbation scale σ.
    pub sigma: f64,
    pub d_z: usize,
    pub rng_seed: u64,
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.d_z == 0 {
            return Err(Error::Config("d_z must be positive".into()));
        }
        Ok(())
    }
}

const INIT_STREAM: u64 = 0x1417;

/// `z^{A,B} = (z_T ± σδ)/√(1+σ²)` with shared `z_T` and antisymmetric `δ`, both standard normal.
pub fn init_replicas(spec: &InitSpec) -> Result<ReplicaPair> {
    spec.validate()?;
    let mut rng = rng_for(spec.rng_seed, &[INIT_STREAM]);
    let z_t = gaussian_vec(&mut rng, spec.d_z);
    let delta = gaussian_vec(&mut rng, spec.d_z);
    Ok(init_from_draws(&z_t, &delta, spec.sigma))
}

pub fn init_from_draws(z_t: &[f64], delta: &[f64], sigma: f64) -> ReplicaPair {
    let norm = 1.0 / (1.0 + sigma * sigma).sqrt();
    let za = z_t.iter().zip(delta).map(|(z, d)| (z + sigma * d) * norm).collect();
    let zb = z_t.iter().zip(delta).map(|(z, d)| (z - sigma * d) * norm).collect();
    ReplicaPair { za, zb }
}

/// Inter-replica correlation `(1−σ²)/(1+σ²)` of the initialization.
pub fn correlation(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    let s2 = sigma * sigma;
    Ok((1.0 - s2) / (1.0 + s2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uv_examples() {
        let x = vec![1.0, -2.0, 0.5];
        let (u, v) = uv_transform(&x, &x);
        assert!(v.iter().all(|&e| e == 0.0));
        for (ui, xi) in u.iter().zip(&x) {
            assert!((ui - 2f64.sqrt() * xi).abs() < 1e-15);
        }
        let neg: Vec<f64> = x.iter().map(|e| -e).collect();
        let (u, v) = uv_transform(&x, &neg);
        assert!(u.iter().all(|&e| e == 0.0));
        assert!((v[1] + 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_gives_identical_replicas() {
        let p = init_replicas(&InitSpec { sigma: 0.0, d_z: 16, rng_seed: 4 }).unwrap();
        assert_eq!(p.za, p.zb);
    }

    #[test]
    fn difference_mode_at_init() {
        let z = [0.3, -1.0];
        let d = [1.5, 0.25];
        let sigma = 0.7;
        let p = init_from_draws(&z, &d, sigma);
        let v = p.difference();
        for (vi, di) in v.iter().zip(d) {
            let expected = 2f64.sqrt() * sigma * di / (1.0 + sigma * sigma).sqrt();
            assert!((vi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn correlation_values() {
        assert_eq!(correlation(0.0).unwrap(), 1.0);
        assert_eq!(correlation(1.0).unwrap(), 0.0);
        assert!((correlation(3f64.sqrt()).unwrap() + 0.5).abs() < 1e-15);
        assert!((correlation(1.0 / 3f64.sqrt()).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(correlation(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn empirical_correlation_matches() {
        for &sigma in &[0.0, 1.0 / 3f64.sqrt(), 1.0, 3f64.sqrt()] {
            let n = 10_000;
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for seed in 0..n {
                let p = init_replicas(&InitSpec { sigma, d_z: 1, rng_seed: seed }).unwrap();
                saa += p.za[0] * p.za[0];
                sbb += p.zb[0] * p.zb[0];
                sab += p.za[0] * p.zb[0];
            }
            let rho = sab / (saa * sbb).sqrt();
            assert!((rho - correlation(sigma).unwrap()).abs() < 0.02, "sigma {sigma}: {rho}");
            assert!((saa / n as f64 - 1.0).abs() < 0.05);
        }
    }
}
