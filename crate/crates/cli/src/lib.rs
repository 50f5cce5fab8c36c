//! Command-line front end: argument parsing, configuration, and artifact
//! emission for the `replica-sync` binary.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::Command;
use crate::config::{parse_bands, BackendKind, Bands, ExperimentConfig, Overrides};

/// Caps rayon's worker count.
pub const THREADS_ENV: &str = "REPLICA_SYNC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "replica-sync", version, about = "Replica-coupled diffusion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Coupled linear-score SDE sweep over g.
    SimulateOu(Common),
    /// Linear-response checks on the toy DiT.
    VerifyLinearization(Common),
    /// Monte-Carlo check of the routing-dominance bound and projector identities.
    BoundsCheck(Common),
    /// Self-consistency roots, κ/SNR curves and speciation gaps.
    Bifurcation(BifurcationArgs),
    /// Output-space commitment curves and logistic fits.
    Protocol1(Common),
    /// Hidden-state mode energies after a coupling window.
    Protocol2(Common),
    /// Fit the DiT decoder against the image prior.
    Calibrate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub g: Option<f64>,
    /// Comma-separated couplings, e.g. 0,0.5,1.
    #[arg(long, value_delimiter = ',')]
    pub g_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Lead and trail mode bands, e.g. 1-4,13-16.
    #[arg(long, value_parser = parse_bands)]
    pub bands: Option<Bands>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub fd_eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BifurcationArgs {
    #[command(flatten)]
    pub common: Common,
    /// Print the self-consistency root at this κ.
    #[arg(long)]
    pub kappa: Option<f64>,
}

impl Sub {
    pub fn split(&self) -> (Command, &Common, Option<f64>) {
        match self {
            Sub::SimulateOu(c) => (Command::SimulateOu, c, None),
            Sub::VerifyLinearization(c) => (Command::VerifyLinearization, c, None),
            Sub::BoundsCheck(c) => (Command::BoundsCheck, c, None),
            Sub::Bifurcation(b) => (Command::Bifurcation, &b.common, b.kappa),
            Sub::Protocol1(c) => (Command::Protocol1, c, None),
            Sub::Protocol2(c) => (Command::Protocol2, c, None),
            Sub::Calibrate(c) => (Command::Calibrate, c, None),
        }
    }
}

impl Common {
    pub fn overrides(&self, kappa: Option<f64>) -> Overrides {
        Overrides {
            seed: self.seed,
            g: self.g,
            g_grid: self.g_grid.clone(),
            sigma: self.sigma,
            steps: self.steps,
            seeds: self.seeds,
            layers: self.layers.clone(),
            bands: self.bands.clone(),
            backend: self.backend,
            eta: self.eta,
            pool: self.pool,
            fd_eps: self.fd_eps,
            kappa,
        }
    }

    pub fn load_config(&self, kappa: Option<f64>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&self.overrides(kappa));
        Ok(cfg)
    }
}

/// Applies `REPLICA_SYNC_THREADS` to the global rayon pool.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize =
            v.trim().parse().with_context(|| format!("{THREADS_ENV}: expected a positive integer, got {v:?}"))?;
        anyhow::ensure!(n > 0, "{THREADS_ENV}: must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn main_with(cli: Cli) -> Result<Vec<String>> {
    init_threads()?;
    let (cmd, common, kappa) = cli.command.split();
    let cfg = common.load_config(kappa)?;
    let (manifest, mut lines) = commands::run(cmd, &cfg, &common.out)?;
    lines.push(format!("wrote {} artifacts to {}", manifest.artifacts.len() + 1, common.out.display()));
    Ok(lines)
}
