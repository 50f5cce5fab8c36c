//! Toy Diffusion Transformer with gated replica attention.

mod attention;
mod calibrate;
mod config;
mod model;
mod patch;

pub use attention::{
    blockwise_softmax, gated_attention, gating_functions, single_attention, AttentionWeights, GatedAttention,
    HeadState, AA, AB, BA, BB,
};
pub(crate) use attention::{head_projections, logits};
pub use calibrate::{calibrate_decoder, calibration_data, fit_decoder, r_squared, CalibrationData, CalibrationReport};
pub use config::{DitConfig, DEFAULT_GATE};
pub use model::{
    gelu, layer_norm, layer_norm_jvp, modulate, silu, sinusoidal_embedding, DitModel, EmbedWeights, LayerWeights,
    MlpWeights, Modulation, PairForward,
};
pub use patch::{patchify, unpatchify, TokenSequence};
