//! Fixed random reservoirs: an echo-state network and a spiking LIF network,
//! with synapse-activation counting for cost comparisons.

mod checkpoint;
mod esn;
mod model;
mod ops;
mod sparse;
mod spectral;
mod spiking;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_esn, write_spiking, Checkpoint, FORMAT_VERSION, SPIKING_PARAMETERS};
pub use esn::{esn_ops_model, esn_step, init_esn, weights_digest, EchoStateReservoir, EsnConfig};
pub use model::{digest_hex, ReservoirModel, ReservoirSpec};
pub use ops::{count_ops, loglog_slope, probe_inputs, OpCount};
pub use sparse::CsrMatrix;
pub use spectral::{spectral_radius, spectral_radius_with, KrylovOptions};
pub use spiking::{
    count_synaptic_ops, init_spiking, lif_step, spiking_forward, LifParams, LifPopulation, SpikeEncoder, SpikingConfig,
    SpikingReservoir, SynapticOps,
};

#[derive(Debug, Error)]
pub enum ReservoirError {
    #[error("invalid reservoir parameter `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("spectral radius did not converge after {matvecs} matrix-vector products")]
    SpectralNonConvergence { matvecs: usize },
    #[error("recurrent weights had zero spectral radius in {attempts} draws")]
    DegenerateRecurrence { attempts: u64 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for ReservoirError {
    fn eq(&self, other: &Self) -> bool {
        use ReservoirError::*;
        match (self, other) {
            (InvalidConfig { field: a, .. }, InvalidConfig { field: b, .. }) => a == b,
            (DimensionMismatch { expected: a, got: b }, DimensionMismatch { expected: c, got: d }) => a == c && b == d,
            (SpectralNonConvergence { matvecs: a }, SpectralNonConvergence { matvecs: b }) => a == b,
            (DegenerateRecurrence { attempts: a }, DegenerateRecurrence { attempts: b }) => a == b,
            (Format(a), Format(b)) => a == b,
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}
