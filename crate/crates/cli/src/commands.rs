//! One function per subcommand: build the core configs, run, emit artifacts.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use replica_sync::diffusion::{make_vp_schedule, simulate_ou, AnalyticBackend, NoiseSchedule, OuConfig, ScoreBackend};
use replica_sync::dit::{calibrate_decoder, gating_functions, CalibrationReport, DitModel};
use replica_sync::linear_response::{
    bound_statistics, check_projector_identities, effective_attention_width, verify_linear_response, BoundStats,
    ProjectorReport,
};
use replica_sync::numerics::rng::{derive_seed, gaussian_matrix, rng_for};
use replica_sync::numerics::{softmax_rows, Matrix};
use replica_sync::output::{fmt_float, fmt_opt, Table};
use replica_sync::protocols::{
    protocol1_fits_table, protocol1_table, protocol2_summary_table, protocol2_table, run_protocol1, run_protocol2,
    FeatureMap, ImageShape, ProtocolIConfig, ProtocolIIConfig,
};
use replica_sync::speciation::{solve_self_consistency, GapReport};

use crate::config::{BackendKind, ExperimentConfig};
use crate::manifest::{Emitter, Manifest};

const CALIBRATION_TAG: u64 = 0xca1;

pub const PROTOCOL1_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateOu,
    VerifyLinearization,
    BoundsCheck,
    Bifurcation,
    Protocol1,
    Protocol2,
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateOu => "simulate-ou",
            Command::VerifyLinearization => "verify-linearization",
            Command::BoundsCheck => "bounds-check",
            Command::Bifurcation => "bifurcation",
            Command::Protocol1 => "protocol1",
            Command::Protocol2 => "protocol2",
            Command::Calibrate => "calibrate",
        }
    }
}

/// Validates `cfg`, runs `cmd`, and writes its artifacts plus `manifest.json`
/// into `out`. Lines meant for the terminal are returned, not printed.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, Vec<String>)> {
    cfg.validate()?;
    let mut em = Emitter::new(out)?;
    let lines = match cmd {
        Command::SimulateOu => simulate_ou_cmd(cfg, &mut em)?,
        Command::VerifyLinearization => verify_cmd(cfg, &mut em)?,
        Command::BoundsCheck => bounds_cmd(cfg, &mut em)?,
        Command::Bifurcation => bifurcation_cmd(cfg, &mut em)?,
        Command::Protocol1 => protocol1_cmd(cfg, &mut em)?,
        Command::Protocol2 => protocol2_cmd(cfg, &mut em)?,
        Command::Calibrate => calibrate_cmd(cfg, &mut em)?,
    };
    Ok((em.finish(cmd.name(), cfg)?, lines))
}

fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    let s = &cfg.schedule;
    make_vp_schedule(s.steps, s.beta_min, s.beta_max).context("schedule")
}

/// Random DiT with its decoder calibrated against the image prior, or the
/// model stored at `calibration.weights`.
pub fn dit_backend(cfg: &ExperimentConfig, sched: &NoiseSchedule) -> Result<(DitModel, Option<CalibrationReport>)> {
    if let Some(path) = &cfg.calibration.weights {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading weights {}", path.display()))?;
        let model: DitModel =
            serde_json::from_str(&text).with_context(|| format!("parsing weights {}", path.display()))?;
        model.config.validate().context("dit")?;
        return Ok((model, None));
    }
    cfg.dit.validate().context("dit")?;
    cfg.prior.validate().context("prior")?;
    let mix = cfg.prior.mixture()?;
    if mix.dim() != cfg.dit.latent_dim() {
        bail!("prior: {}-d image prior does not match the {}-d DiT latent", mix.dim(), cfg.dit.latent_dim());
    }
    let model = DitModel::random(cfg.dit.clone())?;
    let seed = derive_seed(cfg.seed, &[CALIBRATION_TAG]);
    let (model, report) = calibrate_decoder(&model, sched, &mix, cfg.calibration.samples, cfg.calibration.ridge, seed)?;
    Ok((model, Some(report)))
}

fn simulate_ou_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let sched = schedule(cfg)?;
    let ou = OuConfig {
        g_grid: cfg.couplings(&OuConfig::default().g_grid),
        trajectories: cfg.ou.trajectories,
        dim: cfg.ou.dim,
        sigma: cfg.sigma,
        dt: cfg.ou.dt,
        rng_seed: cfg.seed,
    };
    ou.validate().context("ou")?;
    let report = simulate_ou(&sched, &ou)?;
    em.table("ou.csv", &report.table()?)?;

    let mid = sched.steps() / 2;
    let v = report.v_variance_at(mid);
    let decreasing = v.windows(2).all(|w| w[1].1 < w[0].1);
    #[derive(Serialize)]
    struct Summary {
        step: usize,
        v_var: Vec<(f64, f64)>,
        strictly_decreasing: bool,
    }
    em.json("ou_summary.json", &Summary { step: mid, v_var: v.clone(), strictly_decreasing: decreasing })?;
    Ok(v.iter().map(|(g, var)| format!("g = {g}: v variance at step {mid} = {var:.6e}")).collect())
}

fn verify_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    cfg.dit.validate().context("dit")?;
    let model = DitModel::random(cfg.dit.clone())?;
    let mut vc = cfg.linear_response.clone();
    vc.seed = cfg.seed;
    if cfg.g.is_some() || cfg.g_grid.is_some() {
        vc.g_grid = cfg.couplings(&[]);
    }
    if !cfg.layers.is_empty() {
        vc.layers = cfg.layers.clone();
    }
    vc.fd_eps = cfg.fd_eps;
    let report = verify_linear_response(&model, &vc)?;
    em.json("linear_response.json", &report)?;

    let mut pref = Table::new(&["layer", "g", "rho", "xi", "routing", "pattern", "routing_rel_err", "pattern_rel_err"]);
    let mut slopes = Table::new(&["layer", "g", "slope_min", "slope_median", "slope_max"]);
    let mut lines = Vec::new();
    for l in &report.layers {
        for r in &l.prefactors {
            pref.push(vec![
                l.layer.to_string(),
                fmt_float(r.g),
                fmt_float(r.rho),
                fmt_float(r.xi),
                fmt_float(r.routing),
                fmt_float(r.pattern),
                fmt_float(r.routing_rel_err),
                fmt_float(r.pattern_rel_err),
            ])?;
        }
        for r in &l.residual_slopes {
            slopes.push(vec![
                l.layer.to_string(),
                fmt_float(r.g),
                fmt_float(r.min),
                fmt_float(r.median),
                fmt_float(r.max),
            ])?;
        }
        let worst = l.prefactors.iter().map(|r| r.routing_rel_err.max(r.pattern_rel_err)).fold(0.0, f64::max);
        lines.push(format!(
            "layer {}: prefactor rel err {:.2e}, identities {}/{}",
            l.layer, worst, l.identities_passed, l.identities_total
        ));
    }
    em.table("prefactors.csv", &pref)?;
    em.table("residual_slopes.csv", &slopes)?;
    Ok(lines)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct IdentitySummary {
    pub instances: usize,
    pub trials: usize,
    pub passed: usize,
    pub a0p0_max_err: f64,
    pub row_sum_max: f64,
    pub perp_max_err: f64,
    pub pattern_max_err: f64,
    pub first_failure: Option<ProjectorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct BoundsReport {
    pub bound: BoundStats,
    pub identities: IdentitySummary,
    /// `N_eff` of one-hot rows (expected 1) and of uniform rows (expected N).
    pub n_eff_one_hot: Vec<f64>,
    pub n_eff_uniform: Vec<f64>,
}

/// Softmax-normalised Gaussian logits, one instance per index.
pub fn random_attention(seed: u64, index: u64, n: usize) -> Matrix {
    let mut rng = rng_for(seed, &[0x1d, index]);
    softmax_rows(&gaussian_matrix(&mut rng, n, n).scale(2.0)).expect("finite logits")
}

pub fn bounds_report(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let b = &cfg.bounds;
    if b.tokens < 2 || b.width == 0 {
        bail!("bounds: need at least 2 tokens and positive width");
    }
    let bound = bound_statistics(b.instances, b.tokens, b.width, cfg.seed)?;
    let reports: Vec<ProjectorReport> = (0..b.identity_instances)
        .map(|i| {
            let a0 = random_attention(cfg.seed, i as u64, b.tokens);
            check_projector_identities(&a0, b.identity_trials, derive_seed(cfg.seed, &[0x1e, i as u64]))
        })
        .collect::<replica_sync::Result<_>>()?;
    let max = |f: fn(&ProjectorReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let identities = IdentitySummary {
        instances: b.identity_instances,
        trials: b.identity_trials,
        passed: reports.iter().filter(|r| r.passed()).count(),
        a0p0_max_err: max(|r| r.a0p0_max_err),
        row_sum_max: max(|r| r.row_sum_max),
        perp_max_err: max(|r| r.perp_max_err),
        pattern_max_err: max(|r| r.pattern_max_err),
        first_failure: reports.iter().find(|r| !r.passed()).cloned(),
    };
    let n = b.tokens;
    let n_eff_one_hot = effective_attention_width(&Matrix::identity(n))?;
    let n_eff_uniform = effective_attention_width(&Matrix::from_fn(n, n, |_, _| 1.0 / n as f64))?;
    Ok(BoundsReport { bound, identities, n_eff_one_hot, n_eff_uniform })
}

fn bounds_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let r = bounds_report(cfg)?;
    em.json("bounds.json", &r)?;
    Ok(vec![
        format!(
            "routing dominance: {} in regime of {}, {} violations, min slack {:.3}",
            r.bound.in_regime, r.bound.instances, r.bound.violations, r.bound.slack_min
        ),
        format!(
            "projector identities: {}/{} instances pass (row sums {:.1e}, A0P0 {:.1e})",
            r.identities.passed, r.identities.instances, r.identities.row_sum_max, r.identities.a0p0_max_err
        ),
    ])
}

/// Coupling grid `{0, 0.1, …, 1}`.
pub fn decile_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn bifurcation_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let bc = &cfg.bifurcation;
    if bc.kappa_points < 2 || !(bc.kappa_max > 0.0) {
        bail!("bifurcation: kappa_points must be >= 2 and kappa_max positive");
    }
    let mut lines = Vec::new();
    if let Some(k) = bc.kappa {
        let u = solve_self_consistency(k).context("bifurcation.kappa")?;
        lines.push(format!("u*(kappa={k}) = {u:.12}"));
    }

    let mut roots = Table::new(&["kappa", "u_star"]);
    for i in 0..bc.kappa_points {
        let k = bc.kappa_max * i as f64 / (bc.kappa_points - 1) as f64;
        roots.push(vec![fmt_float(k), fmt_float(solve_self_consistency(k)?)])?;
    }
    em.table("self_consistency.csv", &roots)?;

    let regime = bc.regime;
    let mut reports = Vec::new();
    let mut summary = Table::new(&[
        "g",
        "rho",
        "spec_hi",
        "spec_lo",
        "delta_s",
        "snr_split",
        "snr_split_over_rho",
        "inverse_split_over_rho",
        "flag",
    ]);
    for g in cfg.couplings(&decile_grid()) {
        let (rho, _) = gating_functions(g)?;
        let m = regime.m_final;
        match regime.gap(g) {
            Ok(rep) => {
                let split = regime.snr_split(m, g)?;
                let inv = regime.inverse_snr_split(m, g)?;
                let per_rho = |x: f64| if rho > 0.0 { Some(x / rho) } else { None };
                summary.push(vec![
                    fmt_float(g),
                    fmt_float(rho),
                    fmt_opt(rep.spec_hi.value()),
                    fmt_opt(rep.spec_lo.value()),
                    fmt_opt(rep.delta_s),
                    fmt_float(split),
                    fmt_opt(per_rho(split)),
                    fmt_opt(per_rho(inv)),
                    String::new(),
                ])?;
                reports.push(rep);
            }
            // flagged, not dropped
            Err(e) => {
                summary.push(vec![
                    fmt_float(g),
                    fmt_float(rho),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.to_string(),
                ])?;
            }
        }
    }
    em.table("gap_curves.csv", &GapReport::table(&reports)?)?;
    em.table("gap_summary.csv", &summary)?;
    let ds: Vec<Option<f64>> = reports.iter().map(|r| r.delta_s).collect();
    lines.push(format!("delta_s over g: {}", ds.iter().map(|d| fmt_opt(*d)).collect::<Vec<_>>().join(", ")));
    Ok(lines)
}

fn backend_for(cfg: &ExperimentConfig, sched: &NoiseSchedule) -> Result<Box<dyn ScoreBackend>> {
    Ok(match cfg.backend {
        BackendKind::Analytic => {
            cfg.prior.validate().context("prior")?;
            Box::new(AnalyticBackend::new(&cfg.prior.mixture()?, sched)?)
        }
        BackendKind::Dit => Box::new(dit_backend(cfg, sched)?.0),
    })
}

pub fn protocol1_config(cfg: &ExperimentConfig, g: f64) -> ProtocolIConfig {
    let p = &cfg.protocol1;
    ProtocolIConfig {
        g,
        t_int: p.t_int.clone(),
        t_int_step: p.t_int_step,
        seeds: cfg.seeds,
        sigma: cfg.sigma,
        eta: cfg.eta,
        dt_c: p.dt_c,
        pool: cfg.pool,
        upsample: p.upsample,
        shared_noise: p.shared_noise,
        bootstrap: p.bootstrap,
        level: p.level,
        rng_seed: cfg.seed,
    }
}

fn protocol1_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let sched = schedule(cfg)?;
    let grid = cfg.couplings(&PROTOCOL1_GRID);
    let configs: Vec<ProtocolIConfig> = grid.iter().map(|&g| protocol1_config(cfg, g)).collect();
    for c in &configs {
        c.validate(sched.steps()).context("protocol1")?;
    }
    let backend = backend_for(cfg, &sched)?;
    let mix = cfg.prior.mixture()?;
    let phi = FeatureMap::new(&mix, ImageShape::square(cfg.prior.side), cfg.pool)?;
    let runs = configs
        .iter()
        .map(|c| run_protocol1(backend.as_ref(), &sched, &phi, c))
        .collect::<replica_sync::Result<Vec<_>>>()?;

    em.table("protocol1.csv", &protocol1_table(&runs)?)?;
    em.table("protocol1_fits.csv", &protocol1_fits_table(&runs)?)?;
    em.json("protocol1.json", &runs)?;
    Ok(runs
        .iter()
        .map(|r| {
            format!(
                "g = {}: tau_spec {}, tau_g {}, tau_l {}, delta_tau {}",
                r.g,
                fmt_opt(r.tau_spec.tau()),
                fmt_opt(r.tau_g.tau()),
                fmt_opt(r.tau_l.tau()),
                fmt_opt(r.delta_tau)
            )
        })
        .collect())
}

pub fn protocol2_config(cfg: &ExperimentConfig, g: f64) -> ProtocolIIConfig {
    ProtocolIIConfig {
        g,
        tau: cfg.protocol2.tau,
        layers: cfg.layers.clone(),
        seeds: cfg.seeds,
        sigma: cfg.sigma,
        modes: cfg.protocol2.modes,
        lead: cfg.bands.lead,
        trail: cfg.bands.trail,
        dt_c: cfg.protocol2.dt_c,
        rng_seed: cfg.seed,
    }
}

fn protocol2_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let sched = schedule(cfg)?;
    let grid = cfg.couplings(&[0.0]);
    let configs: Vec<ProtocolIIConfig> = grid.iter().map(|&g| protocol2_config(cfg, g)).collect();
    // layer indices can only be checked once the backend exists
    for c in &configs {
        c.validate(sched.steps(), usize::MAX).context("protocol2")?;
    }
    let backend = backend_for(cfg, &sched)?;
    for c in &configs {
        c.validate(sched.steps(), backend.capture_layers()).context("layers")?;
    }
    let runs =
        configs.iter().map(|c| run_protocol2(backend.as_ref(), &sched, c)).collect::<replica_sync::Result<Vec<_>>>()?;

    em.table("protocol2.csv", &protocol2_table(&runs)?)?;
    em.table("protocol2_summary.csv", &protocol2_summary_table(&runs)?)?;
    em.json("protocol2.json", &runs)?;
    let mut lines = Vec::new();
    for r in &runs {
        for l in &r.layers {
            lines.push(match (&l.energies, &l.flag) {
                (_, Some(flag)) => format!("g = {}, layer {}: flagged ({flag})", r.g, l.layer),
                (Some(e), None) => format!("g = {}, layer {}: G_int {}", r.g, l.layer, fmt_opt(e.gint)),
                (None, None) => format!("g = {}, layer {}: no energies", r.g, l.layer),
            });
        }
    }
    Ok(lines)
}

fn calibrate_cmd(cfg: &ExperimentConfig, em: &mut Emitter) -> Result<Vec<String>> {
    let sched = schedule(cfg)?;
    let (model, report) = dit_backend(cfg, &sched)?;
    em.json("dit_weights.json", &model)?;
    em.json("calibration.json", &report)?;
    Ok(match report {
        Some(r) => vec![format!("held-out R^2 = {:.4}, condition {:.3e}", r.r2_test, r.condition)],
        None => vec!["loaded existing weights; nothing calibrated".into()],
    })
}
