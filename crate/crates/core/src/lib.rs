//! Replica-coupled diffusion laboratory.
//!
//! Two copies of a reverse diffusion are run side by side with a symmetric
//! coupling, either directly on the latents or through attention that mixes the
//! two token sequences. The crate provides the pieces needed to study when the
//! replicas commit to the same branch of a bimodal data distribution:
//!
//! - [`numerics`]: eigensolver, softmax, root finding, logistic fits, bootstrap.
//! - [`diffusion`]: VP schedules, replica initialization, mixture scores, samplers.
//! - [`dit`]: a toy Diffusion Transformer with gated replica attention.
//! - [`linear_response`]: first-order attention-difference analysis and propagators.
//! - [`speciation`]: modewise κ/SNR theory and the synchronization gap.
//! - [`protocols`]: intervention (Protocol I) and internal-mode (Protocol II) measurements.

pub mod diffusion;
pub mod dit;
pub mod error;
pub mod linear_response;
pub mod numerics;
pub mod output;
pub mod protocols;
pub mod speciation;

pub use error::{Error, Result};
pub use numerics::{LogisticFit, Matrix};

pub use diffusion::{GaussianMixture, InitSpec, NoiseSchedule, ReplicaPair, ScoreBackend};
pub use dit::{DitConfig, DitModel, GatedAttention, TokenSequence};
pub use linear_response::{PropagatorSpec, ResponseDecomposition};
pub use protocols::{ModeBasis, ProtocolIIRun, ProtocolIRun};
pub use speciation::{GapReport, ModalProjection, SpecStep, SpeciationConfig};
