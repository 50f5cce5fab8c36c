//! Experiment configuration: a JSON file with per-command sections, overlaid
//! by flat command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use replica_sync::dit::DitConfig;
use replica_sync::linear_response::VerifyConfig;
use replica_sync::protocols::{Band, ImagePrior, Upsample};
use replica_sync::speciation::{Gamma, RoutingDominantRegime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Analytic,
    Dit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 100, beta_min: 1e-3, beta_max: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub samples: usize,
    pub ridge: f64,
    /// Load a calibrated model instead of fitting one.
    pub weights: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { samples: 640, ridge: 1e-3, weights: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol1Section {
    pub t_int: Vec<usize>,
    pub t_int_step: usize,
    pub dt_c: f64,
    pub shared_noise: bool,
    pub upsample: Upsample,
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for Protocol1Section {
    fn default() -> Self {
        Self {
            t_int: Vec::new(),
            t_int_step: 4,
            dt_c: 0.2,
            shared_noise: false,
            upsample: Upsample::Bilinear,
            bootstrap: 200,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol2Section {
    pub tau: usize,
    pub modes: usize,
    pub dt_c: f64,
}

impl Default for Protocol2Section {
    fn default() -> Self {
        Self { tau: 50, modes: 16, dt_c: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuSection {
    pub trajectories: usize,
    pub dim: usize,
    pub dt: Option<f64>,
}

impl Default for OuSection {
    fn default() -> Self {
        Self { trajectories: 10_000, dim: 4, dt: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub instances: usize,
    pub identity_instances: usize,
    pub identity_trials: usize,
    pub tokens: usize,
    pub width: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { instances: 1000, identity_instances: 100, identity_trials: 100, tokens: 16, width: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationSection {
    /// Solve the scalar self-consistency at this κ and print the root.
    pub kappa: Option<f64>,
    pub kappa_max: f64,
    pub kappa_points: usize,
    pub gamma: Gamma,
    pub regime: RoutingDominantRegime,
}

impl Default for BifurcationSection {
    fn default() -> Self {
        Self {
            kappa: None,
            kappa_max: 3.0,
            kappa_points: 61,
            gamma: Gamma::Constant(1.0),
            regime: RoutingDominantRegime::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bands {
    pub lead: Band,
    pub trail: Band,
}

impl Default for Bands {
    fn default() -> Self {
        Self { lead: Band::new(1, 4), trail: Band::new(13, 16) }
    }
}

/// Everything a subcommand may read. Unknown fields are rejected so typos
/// surface as errors naming the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub backend: BackendKind,
    pub g: Option<f64>,
    pub g_grid: Option<Vec<f64>>,
    pub sigma: f64,
    pub seeds: usize,
    pub eta: f64,
    pub pool: usize,
    pub fd_eps: f64,
    pub layers: Vec<usize>,
    pub bands: Bands,
    pub schedule: ScheduleConfig,
    pub prior: ImagePrior,
    pub dit: DitConfig,
    pub calibration: CalibrationConfig,
    pub protocol1: Protocol1Section,
    pub protocol2: Protocol2Section,
    pub ou: OuSection,
    pub linear_response: VerifyConfig,
    pub bounds: BoundsSection,
    pub bifurcation: BifurcationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendKind::Analytic,
            g: None,
            g_grid: None,
            sigma: 1.0,
            seeds: 32,
            eta: 1.0,
            pool: 2,
            fd_eps: 1e-5,
            layers: Vec::new(),
            bands: Bands::default(),
            schedule: ScheduleConfig::default(),
            prior: ImagePrior::default(),
            dit: DitConfig::default(),
            calibration: CalibrationConfig::default(),
            protocol1: Protocol1Section::default(),
            protocol2: Protocol2Section::default(),
            ou: OuSection::default(),
            linear_response: VerifyConfig::default(),
            bounds: BoundsSection::default(),
            bifurcation: BifurcationSection::default(),
        }
    }
}

/// Flag values that replace the corresponding config fields when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub g: Option<f64>,
    pub g_grid: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub steps: Option<usize>,
    pub seeds: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub bands: Option<Bands>,
    pub backend: Option<BackendKind>,
    pub eta: Option<f64>,
    pub pool: Option<usize>,
    pub fd_eps: Option<f64>,
    pub kappa: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            };
        }
        set!(seed);
        set!(sigma);
        set!(seeds);
        set!(layers);
        set!(bands);
        set!(backend);
        set!(eta);
        set!(pool);
        set!(fd_eps);
        if let Some(g) = o.g {
            self.g = Some(g);
            self.g_grid = None;
        }
        if let Some(grid) = &o.g_grid {
            self.g_grid = Some(grid.clone());
        }
        if let Some(s) = o.steps {
            self.schedule.steps = s;
        }
        if o.kappa.is_some() {
            self.bifurcation.kappa = o.kappa;
        }
    }

    /// Coupling values for a command: explicit grid, then single `g`, then the default.
    pub fn couplings(&self, default: &[f64]) -> Vec<f64> {
        match (&self.g_grid, self.g) {
            (Some(grid), _) => grid.clone(),
            (None, Some(g)) => vec![g],
            (None, None) => default.to_vec(),
        }
    }

    /// Range checks shared by every command; command-specific checks run in the core configs.
    pub fn validate(&self) -> Result<()> {
        let grid = self.couplings(&[]);
        if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            bail!("g: coupling {g} outside [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bail!("sigma: must be finite and >= 0, got {}", self.sigma);
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bail!("eta: must lie in [0, 1], got {}", self.eta);
        }
        if self.schedule.steps == 0 {
            bail!("schedule.steps: must be positive");
        }
        if self.seeds == 0 {
            bail!("seeds: must be positive");
        }
        if self.pool == 0 {
            bail!("pool: must be positive");
        }
        if !(self.fd_eps > 0.0) {
            bail!("fd_eps: must be positive, got {}", self.fd_eps);
        }
        Ok(())
    }
}

/// `"1-4,13-16"` → lead and trail bands.
pub fn parse_bands(s: &str) -> std::result::Result<Bands, String> {
    let band = |part: &str| -> std::result::Result<Band, String> {
        let (a, b) = part.split_once('-').ok_or_else(|| format!("band {part:?} is not FIRST-LAST"))?;
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad band bound {x:?}"));
        Ok(Band::new(parse(a)?, parse(b)?))
    };
    let (lead, trail) = s.split_once(',').ok_or("bands must look like 1-4,13-16")?;
    Ok(Bands { lead: band(lead)?, trail: band(trail)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig { g: Some(0.3), seed: 7, ..ExperimentConfig::default() };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"sigmaa": 1.0}"#).unwrap_err();
        assert!(err.to_string().contains("sigmaa"), "{err}");
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"protocol2": {"taux": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("taux"), "{err}");
    }

    #[test]
    fn overrides_and_grids() {
        let mut cfg = ExperimentConfig { g_grid: Some(vec![0.1, 0.2]), ..ExperimentConfig::default() };
        assert_eq!(cfg.couplings(&[0.0]), vec![0.1, 0.2]);
        cfg.apply(&Overrides { g: Some(0.5), steps: Some(20), ..Overrides::default() });
        assert_eq!(cfg.couplings(&[0.0]), vec![0.5]);
        assert_eq!(cfg.schedule.steps, 20);
        assert_eq!(ExperimentConfig::default().couplings(&[0.0, 1.0]), vec![0.0, 1.0]);
        cfg.g = Some(1.5);
        assert!(cfg.validate().unwrap_err().to_string().starts_with("g:"));
    }

    #[test]
    fn band_parsing() {
        let b = parse_bands("1-4,13-16").unwrap();
        assert_eq!((b.lead, b.trail), (Band::new(1, 4), Band::new(13, 16)));
        assert!(parse_bands("1-4").is_err());
    }
}
