//! Measurement protocols over any score backend: intervention-based
//! speciation times (Protocol I) and layerwise mode energies (Protocol II).

mod basis;
mod features;
mod prior;
mod protocol1;
mod protocol2;
mod trajectory;

pub use basis::{build_mode_basis, gram_spectrum, mode_energy, mode_energy_covariance, ModeBasis, RANK_TOL};
pub use features::{avg_pool, feature_agreement, scale_decomposition, upsample, FeatureMap, ImageShape, Upsample};
pub use prior::{branch_direction, dct_basis, ImagePrior};
pub use protocol1::{
    fit_curve, protocol1_fits_table, protocol1_table, run_protocol1, CurveFit, ProtocolIConfig, ProtocolIRecord,
    ProtocolIRun, MIN_SEEDS, PROTOCOL1_FITS_HEADER, PROTOCOL1_HEADER,
};
pub use protocol2::{
    protocol2_summary_table, protocol2_table, run_protocol2, run_protocol2_independent, Band, LayerEnergies,
    LayerResult, ProtocolIIConfig, ProtocolIIRun, PROTOCOL2_HEADER, PROTOCOL2_SUMMARY_HEADER,
};
