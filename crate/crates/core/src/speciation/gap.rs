use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dit::gating_functions;
use crate::error::{Error, Result};
use crate::output::{fmt_float, Table};
use crate::speciation::{kappa, snr, ModalProjection};

/// Speciation step of a mode: fractional step index of the first upward
/// crossing of `κ = 1`, or censored when the curve never reaches 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecStep {
    At(f64),
    Censored,
}

impl SpecStep {
    pub fn value(&self) -> Option<f64> {
        match self {
            SpecStep::At(s) => Some(*s),
            SpecStep::Censored => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, SpecStep::Censored)
    }
}

/// First step where the sampled `κ` curve (index = reverse step) reaches 1
/// from below, linearly interpolated between samples.
pub fn speciation_step(kappa: &[f64]) -> Result<SpecStep> {
    if kappa.iter().any(|k| !k.is_finite()) {
        return Err(Error::Input("kappa curve must be finite".into()));
    }
    let Some(i) = kappa.iter().position(|&k| k >= 1.0) else {
        return Ok(SpecStep::Censored);
    };
    if i == 0 {
        return Ok(SpecStep::At(0.0));
    }
    let (k0, k1) = (kappa[i - 1], kappa[i]);
    Ok(SpecStep::At((i - 1) as f64 + (1.0 - k0) / (k1 - k0)))
}

/// `Δs = s_lo − s_hi`; `None` (censored) unless both modes speciate.
pub fn sync_gap(s_lo: SpecStep, s_hi: SpecStep) -> Option<f64> {
    Some(s_lo.value()? - s_hi.value()?)
}

/// Local score gain `γ_s`: one constant or one value per reverse step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl Gamma {
    pub fn at(&self, step: usize) -> Result<f64> {
        match self {
            Gamma::Constant(g) => Ok(*g),
            Gamma::PerStep(v) => {
                v.get(step).copied().ok_or(Error::Bounds { index: step, max: v.len().saturating_sub(1) })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeciationConfig {
    pub gamma: Gamma,
    pub g: f64,
    /// Mode indices to analyse.
    pub modes: Vec<usize>,
}

impl Default for SpeciationConfig {
    fn default() -> Self {
        Self { gamma: Gamma::Constant(1.0), g: 0.0, modes: vec![0, 1] }
    }
}

impl SpeciationConfig {
    pub fn validate(&self) -> Result<()> {
        gating_functions(self.g)?;
        let ok = match &self.gamma {
            Gamma::Constant(g) => *g > 0.0 && g.is_finite(),
            Gamma::PerStep(v) => !v.is_empty() && v.iter().all(|g| *g > 0.0 && g.is_finite()),
        };
        if !ok {
            return Err(Error::Config("gamma must be positive and finite".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        Ok(())
    }
}

/// `κ` and SNR of one mode along the reverse trajectory at fixed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCurve {
    pub mode: usize,
    pub layer: usize,
    pub g: f64,
    pub kappa: Vec<f64>,
    pub snr: Vec<f64>,
    pub spec: SpecStep,
}

impl ModeCurve {
    /// Evaluates `κ_s` and `SNR_s` for projections indexed by reverse step.
    /// Any step outside the positivity regime is an error.
    pub fn from_projections(mode: usize, layer: usize, projs: &[ModalProjection], gamma: &Gamma) -> Result<Self> {
        let g = projs.first().map_or(0.0, |p| p.g);
        let mut kap = Vec::with_capacity(projs.len());
        let mut s = Vec::with_capacity(projs.len());
        for (step, p) in projs.iter().enumerate() {
            let gm = gamma.at(step)?;
            kap.push(kappa(p, gm).map_err(|e| match e {
                Error::OutOfRegime(msg) => Error::OutOfRegime(format!("mode {mode}, step {step}: {msg}")),
                other => other,
            })?);
            s.push(snr(p, gm)?);
        }
        let spec = speciation_step(&kap)?;
        Ok(Self { mode, layer, g, kappa: kap, snr: s, spec })
    }
}

/// Speciation steps of a leading (`hi`) and trailing (`lo`) mode and their gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub layer: usize,
    pub g: f64,
    pub mode_hi: usize,
    pub mode_lo: usize,
    pub spec_hi: SpecStep,
    pub spec_lo: SpecStep,
    /// `s_lo − s_hi`; `None` when either mode is censored.
    pub delta_s: Option<f64>,
    pub curves: Vec<ModeCurve>,
}

impl GapReport {
    pub fn new(hi: ModeCurve, lo: ModeCurve) -> Result<Self> {
        if hi.layer != lo.layer || hi.g != lo.g {
            return Err(Error::Input("gap needs two curves at the same layer and coupling".into()));
        }
        Ok(Self {
            layer: hi.layer,
            g: hi.g,
            mode_hi: hi.mode,
            mode_lo: lo.mode,
            spec_hi: hi.spec,
            spec_lo: lo.spec,
            delta_s: sync_gap(lo.spec, hi.spec),
            curves: vec![hi, lo],
        })
    }

    pub const CSV_HEADER: [&'static str; 7] = ["mode", "step", "layer", "g", "kappa", "snr", "censored"];

    /// One row per (mode, step); `censored` marks modes that never speciate.
    pub fn table(reports: &[GapReport]) -> Result<Table> {
        let mut t = Table::new(&Self::CSV_HEADER);
        for r in reports {
            for c in &r.curves {
                for (step, (k, s)) in c.kappa.iter().zip(&c.snr).enumerate() {
                    t.push(vec![
                        c.mode.to_string(),
                        step.to_string(),
                        c.layer.to_string(),
                        fmt_float(c.g),
                        fmt_float(*k),
                        fmt_float(*s),
                        c.spec.is_censored().to_string(),
                    ])?;
                }
            }
        }
        Ok(t)
    }

    pub fn write_csv<W: Write>(reports: &[GapReport], out: W) -> Result<()> {
        Self::table(reports)?.write(out)
    }
}

/// Synthetic two-mode regime with routing-dominated gains: `π = 0`, a shared
/// `λ^MLP`, `χ_hi > χ_lo`, equal `c`, and a branch separation growing
/// linearly from 0 to `m_final` over `steps` reverse steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingDominantRegime {
    pub chi_hi: f64,
    pub chi_lo: f64,
    pub lambda_mlp: f64,
    pub c: f64,
    pub m_final: f64,
    pub gamma: f64,
    pub steps: usize,
}

impl Default for RoutingDominantRegime {
    fn default() -> Self {
        Self { chi_hi: 0.3, chi_lo: 0.05, lambda_mlp: 0.02, c: 1.0, m_final: 2.0, gamma: 1.0, steps: 100 }
    }
}

impl RoutingDominantRegime {
    pub fn projection(&self, k: usize, chi: f64, step: usize, g: f64) -> Result<ModalProjection> {
        let m = self.m_final * step as f64 / self.steps as f64;
        ModalProjection::from_components(k, self.c, m, self.lambda_mlp, chi, 0.0, g)
    }

    /// Gap report for one coupling (mode 0 = hi, mode 1 = lo, layer 0).
    pub fn gap(&self, g: f64) -> Result<GapReport> {
        let gamma = Gamma::Constant(self.gamma);
        let curve = |k: usize, chi: f64| -> Result<ModeCurve> {
            let projs = (0..=self.steps).map(|s| self.projection(k, chi, s, g)).collect::<Result<Vec<_>>>()?;
            ModeCurve::from_projections(k, 0, &projs, &gamma)
        };
        GapReport::new(curve(0, self.chi_hi)?, curve(1, self.chi_lo)?)
    }

    /// `SNR_hi − SNR_lo` at separation `m` and coupling `g`.
    pub fn snr_split(&self, m: f64, g: f64) -> Result<f64> {
        let hi = ModalProjection::from_components(0, self.c, m, self.lambda_mlp, self.chi_hi, 0.0, g)?;
        let lo = ModalProjection::from_components(1, self.c, m, self.lambda_mlp, self.chi_lo, 0.0, g)?;
        Ok(snr(&hi, self.gamma)? - snr(&lo, self.gamma)?)
    }

    /// `1/SNR_lo − 1/SNR_hi`, which is exactly `ρ(g)(χ_hi − χ_lo)c²/m²` here.
    pub fn inverse_snr_split(&self, m: f64, g: f64) -> Result<f64> {
        let hi = ModalProjection::from_components(0, self.c, m, self.lambda_mlp, self.chi_hi, 0.0, g)?;
        let lo = ModalProjection::from_components(1, self.c, m, self.lambda_mlp, self.chi_lo, 0.0, g)?;
        Ok(1.0 / snr(&lo, self.gamma)? - 1.0 / snr(&hi, self.gamma)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossings() {
        assert_eq!(speciation_step(&[0.5; 20]).unwrap(), SpecStep::Censored);
        let lin: Vec<f64> = (0..=100).map(|s| 2.0 * s as f64 / 100.0).collect();
        assert!((speciation_step(&lin).unwrap().value().unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(speciation_step(&[1.5, 2.0]).unwrap(), SpecStep::At(0.0));
        assert!((speciation_step(&[0.0, 0.5, 1.5]).unwrap().value().unwrap() - 1.5).abs() < 1e-15);
        assert!(speciation_step(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn gaps() {
        assert_eq!(sync_gap(SpecStep::At(3.0), SpecStep::At(3.0)), Some(0.0));
        assert_eq!(sync_gap(SpecStep::At(60.0), SpecStep::At(45.0)), Some(15.0));
        assert_eq!(sync_gap(SpecStep::Censored, SpecStep::At(45.0)), None);
    }

    #[test]
    fn gap_shrinks_with_coupling() {
        let regime = RoutingDominantRegime::default();
        let gaps: Vec<f64> = (0..=10).map(|i| regime.gap(i as f64 / 10.0).unwrap().delta_s.unwrap()).collect();
        assert!(gaps[0] > 0.0);
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
        assert!(gaps[10].abs() < 1e-12);
        // the inverse-SNR split carries exactly one factor of ρ(g)
        let base = regime.inverse_snr_split(1.0, 0.0).unwrap();
        for i in 0..10 {
            let g = i as f64 / 10.0;
            let (rho, _) = gating_functions(g).unwrap();
            assert!((regime.inverse_snr_split(1.0, g).unwrap() / rho - base).abs() < 1e-9 * base);
        }
        assert!(regime.snr_split(1.0, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn csv_schema() {
        let report = RoutingDominantRegime { steps: 4, ..RoutingDominantRegime::default() }.gap(0.5).unwrap();
        let mut buf = Vec::new();
        GapReport::write_csv(&[report], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), GapReport::CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), 1 + 2 * 5);
    }

    #[test]
    fn gamma_config() {
        let cfg: SpeciationConfig = serde_json::from_str(r#"{"gamma": [1.0, 2.0], "g": 0.5}"#).unwrap();
        assert_eq!(cfg.gamma.at(1).unwrap(), 2.0);
        assert!(cfg.gamma.at(2).is_err());
        cfg.validate().unwrap();
        let bad = SpeciationConfig { gamma: Gamma::Constant(0.0), ..SpeciationConfig::default() };
        assert!(bad.validate().is_err());
    }
}
