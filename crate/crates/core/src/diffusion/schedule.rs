use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete variance-preserving schedule.
///
/// Index `s` runs over `0..=steps`; `s = 0` is clean data and `s = steps` is
/// (nearly) pure noise. `beta[s-1]` is the integrated noise rate of the
/// transition `s-1 → s`, and
///
/// ```text
/// alpha_bar[s] = Π_{i<s} (1 - beta[i]),   alpha[s] = sqrt(alpha_bar[s]),
/// sigma2[s]    = 1 - alpha_bar[s]
/// ```
///
/// `alpha_bar[s] + sigma2[s] == 1.0` holds exactly in floating point: whichever of the
/// two is ≥ ½ is derived from the other, so the subtraction is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    sigma2: Vec<f64>,
}

/// Linear ramp endpoints used when none are given. These are the classic
/// 1000-step DDPM endpoints rescaled to 100 steps (per-step rates × 10), so the
/// schedule still reaches near-pure noise at `s = S`.
pub const DEFAULT_BETA_MIN: f64 = 1e-3;
pub const DEFAULT_BETA_MAX: f64 = 0.2;
pub const DEFAULT_STEPS: usize = 100;

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step rates.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        let steps = beta.len();
        if steps < 1 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, b)| !(**b >= 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta[{i}] = {b} outside [0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        let mut sigma2 = Vec::with_capacity(steps + 1);
        let mut prod = 1.0_f64;
        alpha_bar.push(1.0);
        sigma2.push(0.0);
        for &b in &beta {
            prod *= 1.0 - b;
            let (ab, s2) = if prod >= 0.5 {
                (prod, 1.0 - prod)
            } else {
                let s2 = 1.0 - prod;
                (1.0 - s2, s2)
            };
            alpha_bar.push(ab);
            sigma2.push(s2);
        }
        let alpha = alpha_bar.iter().map(|a| a.sqrt()).collect();
        Ok(Self { steps, beta, alpha_bar, alpha, sigma2 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, s: usize) -> Result<()> {
        if s > self.steps {
            return Err(Error::Bounds { index: s, max: self.steps });
        }
        Ok(())
    }

    /// Integrated rate of the transition into index `s` (`1 ≤ s ≤ S`).
    pub fn beta(&self, s: usize) -> f64 {
        self.beta[s - 1]
    }

    /// Instantaneous rate on the unit time horizon, i.e. `S · beta(s)`, so
    /// `rate(s) · (1/S) = beta(s)`.
    pub fn rate(&self, s: usize) -> f64 {
        self.steps as f64 * self.beta(s)
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self, s: usize) -> f64 {
        self.alpha_bar[s]
    }

    /// Signal coefficient `α_s`.
    pub fn alpha(&self, s: usize) -> f64 {
        self.alpha[s]
    }

    /// Noise variance `σ_s² = 1 - α_s²`.
    pub fn sigma2(&self, s: usize) -> f64 {
        self.sigma2[s]
    }

    pub fn sigma(&self, s: usize) -> f64 {
        self.sigma2[s].sqrt()
    }

    pub fn validate_index(&self, s: usize) -> Result<()> {
        self.check(s)
    }
}

/// Linear β ramp from `beta_min` to `beta_max` over `steps` transitions.
///
/// A zero ramp is accepted (it is the noiseless degenerate schedule); negative
/// endpoints, an inverted ramp, or `beta_max ≥ 1` are configuration errors.
pub fn make_vp_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs S >= 2, got {steps}")));
    }
    if !(beta_min >= 0.0) || !(beta_max >= beta_min) || !(beta_max < 1.0) {
        return Err(Error::Config(format!("need 0 <= beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
    }
    let betas = (0..steps).map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64).collect();
    NoiseSchedule::from_betas(betas)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_vp_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_schedule() {
        let s = make_vp_schedule(2, 0.0, 0.0).unwrap();
        for i in 0..=2 {
            assert_eq!(s.alpha(i), 1.0);
            assert_eq!(s.sigma2(i), 0.0);
        }
    }

    #[test]
    fn variance_preserving_exactly() {
        let s = make_vp_schedule(1000, 1e-4, 2e-2).unwrap();
        assert_eq!(s.sigma2(0), 0.0);
        assert_eq!(s.alpha(0), 1.0);
        for i in 0..=1000 {
            assert_eq!(s.alpha_bar(i) + s.sigma2(i), 1.0, "step {i}");
        }
        assert!((1..=1000).all(|i| s.alpha(i) < s.alpha(i - 1)));
    }

    #[test]
    fn default_reaches_noise() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert!(s.alpha_bar(100) < 1e-4);
    }

    #[test]
    fn rejects_bad_ramps() {
        assert!(matches!(make_vp_schedule(1, 0.1, 0.2), Err(Error::Config(_))));
        assert!(matches!(make_vp_schedule(10, -0.1, 0.2), Err(Error::Config(_))));
        assert!(matches!(make_vp_schedule(10, 0.3, 0.2), Err(Error::Config(_))));
        assert!(matches!(make_vp_schedule(10, 0.1, 1.0), Err(Error::Config(_))));
    }
}
