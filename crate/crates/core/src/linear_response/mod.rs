//! Linearized attention difference around the symmetric replica state, the
//! per-layer difference-mode propagator, and the softmax identities behind
//! the routing/pattern split.

mod identities;
mod jacobian;
mod propagator;
mod report;
mod response;

pub use identities::{
    check_projector_identities, effective_attention_width, perp_operator_norm, project_constant, project_mean_free,
    routing_dominance_bound, BoundCheck, IdentityViolation, ProjectorReport, A0P0_TOL, BOUND_ROUNDING, PROJECTION_TOL,
    ROW_SUM_TOL,
};
pub use jacobian::{softmax_jacobian_apply, softmax_jacobian_rows, STOCHASTIC_TOL};
pub use propagator::{
    attention_half_difference, block_difference, build_propagator, nonlinear_remainder, repartition,
    repartition_propagator, PropagatorSpec, FD_EPS_RANGE,
};
pub use report::{
    bound_statistics, coherent_bound_instance, verify_linear_response, BoundStats, LayerReport, LinearResponseReport,
    PrefactorRow, PropagatorSummary, SlopeRow, VerifyConfig,
};
pub use response::{
    base_state, measure_attention_difference, residual_scaling, Perturbation, PrefactorFit, ResidualScaling,
    ResponseDecomposition,
};
