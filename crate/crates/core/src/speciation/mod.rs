//! Mean-field speciation analysis of the difference mode: modal projections,
//! the `κ`/SNR formulas, the scalar self-consistency condition, and the
//! synchronization gap between leading and trailing modes.

mod gap;
mod modal;
mod theory;

pub use gap::{
    speciation_step, sync_gap, Gamma, GapReport, ModeCurve, RoutingDominantRegime, SpecStep, SpeciationConfig,
};
pub use modal::{alignment_cosine, mode_mixing, project_modal, ModalProjection, UNIT_TOL};
pub use theory::{
    cumulative_gain, fixed_point_residual, kappa, propagated_snr, repartitioned_residual, snr, snr_expanded,
    solve_self_consistency, SELF_CONSISTENCY_TOL,
};
