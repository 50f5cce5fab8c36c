//! VP schedules, replica initialization, mixture scores and reverse samplers.

mod backend;
mod mixture;
mod ou;
mod replica;
mod sampler;
mod schedule;

pub use backend::{scaled_difference, AnalyticBackend, PairPrediction, ScoreBackend};
pub use mixture::{effective_precision, mixture_score, GaussianMixture};
pub use ou::{simulate_ou, OuConfig, OuReport, OuRow};
pub use replica::{correlation, init_from_draws, init_replicas, uv_transform, InitSpec, ReplicaPair};
pub use sampler::{couple_latents, coupled_reverse_step, ddim_sigma, ddim_step};
pub use schedule::{make_vp_schedule, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_STEPS};
